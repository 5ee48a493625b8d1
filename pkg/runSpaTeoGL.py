'''
Command line front end of the SpaTeoGL toolkit

Commands:
	synth     Generate a synthetic recording and its ground truth from a SynthSettings json
	learn     Preprocess, window and learn spatial + temporal graphs from a recording
	baseline  HVG + PCA + logistic regression baseline on a recording
	analyze   Score electrodes and summarize the graphs of a learn output directory
	compare   Paired per-class Wilcoxon tests between two sets of metrics.csv files

Global args:
	--seed, --threads, --config (PipelineSettings json), --out (output directory)
	-log: Output level of the files in <out>/LOGS. Options are [CRITICAL, ERROR, WARNING, INFO, DEBUG]. Defaults to INFO.
'''
import argparse
import os
import sys
import traceback

from PipelineErrors import ERROR_CLASS, PipelineError, InputOutputError
import PipelineRunner
import utils


g_ExitCodeHelp = '''exit codes:
  0   success
  2   usage error
''' + "\n".join("  {:<3} {}".format(errorClass.value, errorClass.name) for errorClass in sorted(ERROR_CLASS, key=lambda errorClass: errorClass.value)) + '''

On failure a single line "ERROR <CLASS>: <message>" is printed on stderr.'''


def _settingsFromArgs(args):
	overrides = {
		("Preprocessing", "NotchHz"): getattr(args, "notchHz", None),
		("Preprocessing", "BandLowHz"): getattr(args, "bandLowHz", None),
		("Preprocessing", "BandHighHz"): getattr(args, "bandHighHz", None),
		("Preprocessing", "TargetRate"): getattr(args, "targetRate", None),
		("Preprocessing", "Enabled"): False if (getattr(args, "noPreprocess", False)) else None,
		("Windowing", "WindowMs"): getattr(args, "windowMs", None),
		("Windowing", "OverlapFraction"): getattr(args, "overlap", None),
		("Windowing", "NPre"): getattr(args, "nPre", None),
		("Windowing", "NPost"): getattr(args, "nPost", None),
		("SpaTeoGL", "Beta"): getattr(args, "beta", None),
		("SpaTeoGL", "MaxOuterIter"): getattr(args, "maxOuterIter", None),
		("SpaTeoGL", "OuterRelTol"): getattr(args, "outerRelTol", None),
		("SpaTeoGL", "KktTol"): getattr(args, "kktTol", None),
		("SpaTeoGL", "SweepMode"): getattr(args, "sweepMode", None),
		("SpaTeoGL", "NormalizeDistances"): False if (getattr(args, "noNormalize", False)) else None,
		("Baseline", "NFolds"): getattr(args, "nFolds", None),
		("Baseline", "NComponents"): getattr(args, "nComponents", None),
		("Baseline", "L2"): getattr(args, "l2", None),
		("Baseline", "NPermutations"): getattr(args, "nPermutations", None),
		("Analysis", "ScoreMode"): getattr(args, "scoreMode", None),
		("Analysis", "TopK"): getattr(args, "topK", None),
		("Analysis", "TopFraction"): getattr(args, "topFraction", None),
		("Analysis", "DominanceNormalization"): getattr(args, "dominanceNormalization", None)
	}
	return PipelineRunner.loadPipelineSettings(args.configPath, overrides)


def _addSignalArgs(parser):
	parser.add_argument("recording", help="Recording file (.csv, .bin or .stgl)")
	parser.add_argument("--annotations", dest="annotations", default=None, help="Annotation sidecar json. Defaults to the recording path with a .json extension")
	parser.add_argument("--notch-hz", dest="notchHz", type=float, default=None, help="Notch frequency in Hz (default 60)")
	parser.add_argument("--band-low", dest="bandLowHz", type=float, default=None, help="Bandpass low edge in Hz (default 0.5)")
	parser.add_argument("--band-high", dest="bandHighHz", type=float, default=None, help="Bandpass high edge in Hz (default 100)")
	parser.add_argument("--target-rate", dest="targetRate", type=float, default=None, help="Rate after decimation in Hz, must divide the sample rate (default 250)")
	parser.add_argument("--no-preprocess", dest="noPreprocess", action="store_true", help="Skip notch, bandpass and decimation")
	parser.add_argument("--window-ms", dest="windowMs", type=float, default=None, help="Window length in ms (default 512)")
	parser.add_argument("--overlap", dest="overlap", type=float, default=None, help="Window overlap fraction in [0, 1) (default 0.5)")
	parser.add_argument("--n-pre", dest="nPre", type=int, default=None, help="Pre-onset windows (default 3)")
	parser.add_argument("--n-post", dest="nPost", type=int, default=None, help="Post-onset windows (default 9)")


def buildParser():
	common = argparse.ArgumentParser(add_help=False)
	common.add_argument("--seed", dest="seed", type=int, default=None, help="Random seed (synth spec seed override, CV folds)")
	common.add_argument("--threads", dest="threads", type=int, default=1, help="Worker threads for jacobi sweeps")
	common.add_argument("--config", dest="configPath", default=None, help="PipelineSettings json")
	common.add_argument("--out", dest="outputDir", default=None, help="Output directory. Defaults to OUTPUT/<command>_<timestamp>")
	common.add_argument("-log", dest="logLevel", default="INFO", help="Output level of the log files. Options are [CRITICAL, ERROR, WARNING, INFO, DEBUG]. Defaults to INFO.")
	common.add_argument("--quiet", dest="quiet", action="store_true", help="Hide progress bars")

	parser = argparse.ArgumentParser(description="SpaTeoGL spatiotemporal graph learning toolkit", epilog=g_ExitCodeHelp, formatter_class=argparse.RawDescriptionHelpFormatter)
	subparsers = parser.add_subparsers(dest="command", required=True)

	synthParser = subparsers.add_parser("synth", parents=[common], help="Generate a synthetic recording")
	synthParser.add_argument("spec", help="SynthSettings json")
	synthParser.add_argument("--format", dest="recordingFormat", choices=["csv", "binary"], default="csv", help="Recording format (default csv)")

	learnParser = subparsers.add_parser("learn", parents=[common], help="Learn spatial and temporal graphs")
	_addSignalArgs(learnParser)
	learnParser.add_argument("--beta", dest="beta", type=float, default=None, help="Frobenius regularization weight, > 0 (default 0.5)")
	learnParser.add_argument("--max-outer-iter", dest="maxOuterIter", type=int, default=None, help="Outer iteration cap (default 100)")
	learnParser.add_argument("--outer-rel-tol", dest="outerRelTol", type=float, default=None, help="Relative objective decrease to stop at (default 1e-6)")
	learnParser.add_argument("--kkt-tol", dest="kktTol", type=float, default=None, help="Block solver KKT tolerance (default 1e-7)")
	learnParser.add_argument("--sweep-mode", dest="sweepMode", choices=["gauss-seidel", "jacobi"], default=None, help="Spatial sweep order (default gauss-seidel)")
	learnParser.add_argument("--no-normalize", dest="noNormalize", action="store_true", help="Do not rescale windows to unit mean pairwise distance")

	baselineParser = subparsers.add_parser("baseline", parents=[common], help="HVG + PCA + logistic regression baseline")
	_addSignalArgs(baselineParser)
	baselineParser.add_argument("--n-folds", dest="nFolds", type=int, default=None, help="Stratified CV folds (default 5)")
	baselineParser.add_argument("--n-components", dest="nComponents", type=int, default=None, help="PCA components (default: 95%% explained variance)")
	baselineParser.add_argument("--l2", dest="l2", type=float, default=None, help="Logistic regression L2 weight (default 1.0)")
	baselineParser.add_argument("--n-permutations", dest="nPermutations", type=int, default=None, help="Label permutations for the null distribution (default 0)")

	analyzeParser = subparsers.add_parser("analyze", parents=[common], help="Score electrodes of a learn output directory")
	analyzeParser.add_argument("learnDir", help="Output directory of a learn run")
	analyzeParser.add_argument("annotations", help="Annotation sidecar json with SozChannels")
	analyzeParser.add_argument("--score-mode", dest="scoreMode", choices=["degree", "weighted_degree"], default=None, help="Electrode score (default weighted_degree)")
	analyzeParser.add_argument("--top-k", dest="topK", type=int, default=None, help="Electrodes classified as SOZ (default: number of labeled SOZ electrodes)")
	analyzeParser.add_argument("--top-fraction", dest="topFraction", type=float, default=None, help="Top electrode fraction for window dominance (default 0.25)")
	analyzeParser.add_argument("--dominance-normalization", dest="dominanceNormalization", choices=["group", "top"], default=None, help="Divide dominance counts by group size or top-set size (default group)")

	compareParser = subparsers.add_parser("compare", parents=[common], help="Compare two methods' metrics")
	compareParser.add_argument("dirA", help="Directory (searched recursively) or metrics.csv of method A")
	compareParser.add_argument("dirB", help="Directory (searched recursively) or metrics.csv of method B")
	compareParser.add_argument("--report", dest="reportPath", default=None, help="Report csv. Defaults to <out>/compare.csv")

	return parser


def runCommand(args, outputDir):
	settings = _settingsFromArgs(args)
	showProgress = not args.quiet

	if (args.command == "synth"):
		PipelineRunner.runSynth(args.spec, outputDir, seed=args.seed, recordingFormat=args.recordingFormat, logLevel=args.logLevel)
	elif (args.command == "learn"):
		PipelineRunner.runLearn(args.recording, outputDir, annotationsPath=args.annotations, settings=settings, threads=args.threads, showProgress=showProgress, logLevel=args.logLevel)
	elif (args.command == "baseline"):
		seed = 0 if (args.seed is None) else args.seed
		PipelineRunner.runBaseline(args.recording, outputDir, annotationsPath=args.annotations, settings=settings, seed=seed, showProgress=showProgress, logLevel=args.logLevel)
	elif (args.command == "analyze"):
		PipelineRunner.runAnalyze(args.learnDir, outputDir, args.annotations, settings=settings, logLevel=args.logLevel)
	elif (args.command == "compare"):
		PipelineRunner.runCompare(args.dirA, args.dirB, outputDir, reportPath=args.reportPath, settings=settings, logLevel=args.logLevel)
	return outputDir


def main(argv=None):
	'''
	Returns the process exit code. Tracebacks go to <out>/LOGS/runSpaTeoGL.log
	'''
	args = buildParser().parse_args(argv)
	outputDir = args.outputDir
	if (not outputDir):
		outputDir = os.path.join("OUTPUT", "{}_{}".format(args.command, utils.getTimeStamp()))
	logger = utils.getLogger("runSpaTeoGL", console="CRITICAL", outputdir=os.path.join(outputDir, "LOGS"), logFile=True, fileLevel="DEBUG")
	try:
		runCommand(args, outputDir)
		return 0
	except PipelineError as e:
		logger.debug(traceback.format_exc())
		sys.stderr.write(e.oneLine() + "\n")
		return e.exitCode
	except OSError as e:
		logger.debug(traceback.format_exc())
		error = InputOutputError(str(e))
		sys.stderr.write(error.oneLine() + "\n")
		return error.exitCode
	except Exception as e:
		logger.error(traceback.format_exc())
		sys.stderr.write("ERROR {}: {}\n".format(ERROR_CLASS.INTERNAL.name, str(e).replace("\n", " ")))
		return ERROR_CLASS.INTERNAL.value


if __name__ == "__main__":
	sys.exit(main())
