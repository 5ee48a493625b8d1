'''
Command bodies of the runSpaTeoGL.py front end: synth, learn, baseline, analyze and compare.

Every command writes its outputs under one directory together with
	-config.json      the fully resolved settings
	-manifest.json    command, parameters, input hashes, tool version and stage timings
	-LOGS/            one log file per toolkit component
'''
import copy
import os
import time

import numpy as np
import pandas as pd

from PipelineErrors import ConfigError, AnalysisError
from SignalIO import loadRecording, preprocess, makeWindows, sidecarPathFor, readWindowLabels
from SpaTeoGL import SpaTeoGLConfig, runSpaTeoGL, writeResult, readResult
from HVGBaseline import hvgFeatures, crossValidate, fitFullModel, permutationNull
from Synth import SynthSpec, generate, writeSynthOutput
import Analysis
import utils


g_ToolVersion = "1.0.0"
g_ComponentLoggers = ["PipelineRunner", "SignalIO", "QPSolver", "SpaTeoGL", "HVGBaseline", "Analysis", "Synth"]

g_DefaultSettings = {
	"Preprocessing": {
		"Enabled": True,
		"NotchHz": 60.0,
		"BandLowHz": 0.5,
		"BandHighHz": 100.0,
		"TargetRate": 250.0
	},
	"Windowing": {
		"WindowMs": 512.0,
		"OverlapFraction": 0.5,
		"NPre": 3,
		"NPost": 9
	},
	"SpaTeoGL": {
		"Beta": 0.5,
		"MaxOuterIter": 100,
		"OuterRelTol": 1e-6,
		"KktTol": 1e-7,
		"MaxSolverIter": 5000,
		"SweepMode": "gauss-seidel",
		"NormalizeDistances": True
	},
	"Baseline": {
		"FeatureWindows": None,
		"NFolds": 5,
		"NComponents": None,
		"VarianceTarget": 0.95,
		"L2": 1.0,
		"MaxIter": 100,
		"NPermutations": 0
	},
	"Analysis": {
		"ScoreMode": "weighted_degree",
		"TopK": None,
		"TopFraction": 0.25,
		"DominanceNormalization": "group",
		"EdgeThreshold": 1e-4,
		"HistogramBins": 10
	}
}


class RunManifest:
	'''
	Provenance record written once per output directory
	'''
	def __init__(self, command, parameters):
		self.command = command
		self.parameters = parameters
		self.inputHashes = {}
		self.timings = {}
		self.stageStart = None

	def addInput(self, name, path):
		if (path and os.path.isfile(path)):
			self.inputHashes[name] = utils.fileHash(path)

	def startStage(self):
		self.stageStart = time.perf_counter()

	def endStage(self, stageName):
		self.timings[stageName] = round(time.perf_counter() - self.stageStart, 6)

	def toDict(self):
		return {
			"Command": self.command,
			"Parameters": self.parameters,
			"InputHashes": self.inputHashes,
			"ToolVersion": g_ToolVersion,
			"TimeStamp": utils.getTimeStamp(sanitize=False),
			"Timings": self.timings
		}

	def write(self, outputDir):
		utils.dictToJsonFile(self.toDict(), os.path.join(outputDir, "manifest.json"))


#######################
# Settings
#######################
def loadPipelineSettings(settingsPath=None, overrides=None):
	'''
	Defaults, then the "settings" section of a PipelineSettings file, then non-None CLI overrides
	keyed by (section, key). Unknown sections or keys raise ConfigError.
	'''
	settings = copy.deepcopy(g_DefaultSettings)
	if (settingsPath):
		fileDict = utils.loadJsonFile(settingsPath)
		if ("settings" not in fileDict):
			raise ConfigError("\"settings\" missing from \"{}\"".format(settingsPath))
		for section, values in fileDict["settings"].items():
			if (section not in settings):
				raise ConfigError("Unknown settings section \"{}\" in \"{}\"".format(section, settingsPath))
			for key, value in values.items():
				if (key not in settings[section]):
					raise ConfigError("Unknown setting \"{}.{}\" in \"{}\"".format(section, key, settingsPath))
				settings[section][key] = value

	if (overrides):
		for (section, key), value in overrides.items():
			if (value is not None):
				settings[section][key] = value
	return settings


def configureLogging(outputDir, logLevel="INFO"):
	'''
	Points every component logger at <outputDir>/LOGS. Returns the runner's own logger
	'''
	logDir = os.path.join(outputDir, "LOGS")
	for name in g_ComponentLoggers:
		utils.getLogger(name, console="WARNING", outputdir=logDir, logFile=True, fileLevel=logLevel)
	return utils.getLogger("PipelineRunner", console="WARNING", outputdir=logDir, logFile=True, fileLevel=logLevel)


def _loadWindows(recordingPath, annotationsPath, settings, manifest, logger):
	manifest.addInput("Recording", recordingPath)
	manifest.addInput("Annotations", annotationsPath)

	manifest.startStage()
	recording = loadRecording(recordingPath, sidecarPath=annotationsPath)
	manifest.endStage("Load")
	logger.info("Loaded {}".format(recording))

	preprocessing = settings["Preprocessing"]
	if (preprocessing["Enabled"]):
		manifest.startStage()
		recording = preprocess(recording, notchHz=preprocessing["NotchHz"], band=(preprocessing["BandLowHz"], preprocessing["BandHighHz"]), targetRate=preprocessing["TargetRate"])
		manifest.endStage("Preprocess")
		logger.info("Preprocessed to {} Hz".format(recording.sampleRate))

	windowing = settings["Windowing"]
	windowed = makeWindows(recording, windowMs=windowing["WindowMs"], overlapFraction=windowing["OverlapFraction"], nPre=int(windowing["NPre"]), nPost=int(windowing["NPost"]))
	logger.info("{}".format(windowed))
	return recording, windowed


#######################
# Commands
#######################
def runSynth(specPath, outputDir, seed=None, recordingFormat="csv", logLevel="INFO"):
	'''
	Generates a synthetic recording with its ground truth
	'''
	utils.createFolderPath(os.path.join(outputDir, "manifest.json"))
	logger = configureLogging(outputDir, logLevel)
	spec = SynthSpec.fromJsonFile(specPath)
	if (seed is not None):
		spec = spec.withSeed(seed)
	logger.info("Synth spec {}".format(spec))

	manifest = RunManifest("synth", {"Spec": spec.toDict(), "Format": recordingFormat})
	manifest.addInput("Spec", specPath)
	manifest.startStage()
	output = generate(spec)
	recordingPath = writeSynthOutput(output, outputDir, recordingFormat)
	manifest.endStage("Generate")

	utils.dictToJsonFile({"name": spec.name, "settings": spec.toDict()}, os.path.join(outputDir, "config.json"))
	manifest.write(outputDir)
	logger.info("Wrote {}".format(recordingPath))
	return output


def runLearn(recordingPath, outputDir, annotationsPath=None, settings=None, threads=1, showProgress=False, logLevel="INFO"):
	'''
	Preprocess, window and run SpaTeoGL on one recording
	'''
	utils.createFolderPath(os.path.join(outputDir, "manifest.json"))
	logger = configureLogging(outputDir, logLevel)
	settings = loadPipelineSettings() if (settings is None) else settings
	if (annotationsPath is None):
		annotationsPath = sidecarPathFor(recordingPath)

	manifest = RunManifest("learn", settings)
	recording, windowed = _loadWindows(recordingPath, annotationsPath, settings, manifest, logger)

	config = SpaTeoGLConfig.fromSettings(settings["SpaTeoGL"], threads=threads, showProgress=showProgress)
	manifest.startStage()
	result = runSpaTeoGL(windowed.windows, config)
	manifest.endStage("SpaTeoGL")
	logger.info("{}".format(result))

	writeResult(result, outputDir, nodeIds=windowed.channelNames, windowLabels=windowed.windowLabels)
	resolved = utils.loadJsonFile(os.path.join(outputDir, "config.json"))
	resolved["RecordingId"] = recording.recordingId
	resolved["Settings"] = settings
	utils.dictToJsonFile(resolved, os.path.join(outputDir, "config.json"))
	manifest.write(outputDir)
	return result


def runBaseline(recordingPath, outputDir, annotationsPath=None, settings=None, seed=0, showProgress=False, logLevel="INFO"):
	'''
	HVG features, stratified CV with PCA and logistic regression, optional permutation null
	'''
	utils.createFolderPath(os.path.join(outputDir, "manifest.json"))
	logger = configureLogging(outputDir, logLevel)
	settings = loadPipelineSettings() if (settings is None) else settings
	if (annotationsPath is None):
		annotationsPath = sidecarPathFor(recordingPath)

	manifest = RunManifest("baseline", dict(settings, Seed=seed))
	recording, windowed = _loadWindows(recordingPath, annotationsPath, settings, manifest, logger)
	baseline = settings["Baseline"]
	cvKwargs = {
		"nFolds": int(baseline["NFolds"]),
		"nComponents": baseline["NComponents"],
		"varianceTarget": float(baseline["VarianceTarget"]),
		"l2": float(baseline["L2"]),
		"maxIter": int(baseline["MaxIter"]),
		"recordingId": recording.recordingId
	}

	manifest.startStage()
	features = hvgFeatures(windowed, selected=baseline["FeatureWindows"], showProgress=showProgress)
	manifest.endStage("Features")
	logger.info("{}".format(features))
	utils.writeCsv(features.toDataFrame(), os.path.join(outputDir, "features.csv"))

	manifest.startStage()
	cvResult = crossValidate(features, seed=seed, **cvKwargs)
	pca, model = fitFullModel(features, nComponents=baseline["NComponents"], varianceTarget=float(baseline["VarianceTarget"]), l2=float(baseline["L2"]), maxIter=int(baseline["MaxIter"]))
	manifest.endStage("Training")

	utils.writeCsv(cvResult.foldPredictions, os.path.join(outputDir, "fold_predictions.csv"))
	utils.writeCsv(Analysis.metricsTable([cvResult.metricsRow("HVG")]), os.path.join(outputDir, "metrics.csv"))

	modelDict = {
		"RecordingId": recording.recordingId,
		"PcaComponents": pca.nComponents,
		"ExplainedVarianceRatio": pca.explainedVarianceRatio().tolist(),
		"Model": model.toDict()
	}
	if (int(baseline["NPermutations"]) > 0):
		manifest.startStage()
		observed, nullAccuracies, pValue = permutationNull(features, nPermutations=int(baseline["NPermutations"]), seed=seed, showProgress=showProgress, **cvKwargs)
		manifest.endStage("PermutationNull")
		modelDict["PermutationNull"] = {"Observed": observed, "NullMean": float(np.mean(nullAccuracies)) if (len(nullAccuracies) > 0) else None, "NullStd": float(np.std(nullAccuracies)) if (len(nullAccuracies) > 0) else None, "PValue": pValue}
		utils.writeCsv(pd.DataFrame({"Permutation": np.arange(len(nullAccuracies)), "TotalAccuracy": nullAccuracies}), os.path.join(outputDir, "permutation_null.csv"))

	utils.dictToJsonFile(modelDict, os.path.join(outputDir, "baseline_model.json"))
	utils.dictToJsonFile(dict(settings, Seed=seed), os.path.join(outputDir, "config.json"))
	manifest.write(outputDir)
	return cvResult


def runAnalyze(learnDir, outputDir, annotationsPath, settings=None, logLevel="INFO"):
	'''
	Electrode scores, top-k metrics, window dominance, regime and mean-graph contrasts of a learn output directory
	'''
	utils.createFolderPath(os.path.join(outputDir, "manifest.json"))
	logger = configureLogging(outputDir, logLevel)
	settings = loadPipelineSettings() if (settings is None) else settings
	analysis = settings["Analysis"]

	manifest = RunManifest("analyze", settings)
	manifest.addInput("Annotations", annotationsPath)
	manifest.addInput("Temporal", os.path.join(learnDir, "temporal.csv"))
	result, channelNames = readResult(learnDir)
	labels = readWindowLabels(os.path.join(learnDir, "window_labels.csv"))
	annotations = utils.loadJsonFile(annotationsPath)
	sozChannels = set(str(name) for name in annotations.get("SozChannels", []))
	sozMask = np.array([name in sozChannels for name in channelNames], dtype=bool)
	recordingId = annotations.get("RecordingId", os.path.basename(os.path.normpath(learnDir)))

	manifest.startStage()
	scores = Analysis.scoreElectrodes(result.spatialLaplacians, labels, mode=analysis["ScoreMode"], channelNames=channelNames, sozMask=sozMask, edgeThreshold=float(analysis["EdgeThreshold"]))
	topK = analysis["TopK"]
	scores = Analysis.classifyTopK(scores, None if (topK is None) else int(topK))
	metrics = Analysis.perClassMetrics([score.predictedSoz for score in scores], [score.trueSoz for score in scores])
	logger.info("{}: {}".format(recordingId, metrics))
	utils.writeCsv(Analysis.scoresTable(scores), os.path.join(outputDir, "electrode_scores.csv"))
	utils.writeCsv(Analysis.metricsTable([Analysis.metricsRow(recordingId, "SpaTeoGL", [metrics])]), os.path.join(outputDir, "metrics.csv"))

	dominance = Analysis.windowDominance(result.spatialLaplacians, labels, sozMask, topFraction=float(analysis["TopFraction"]), channelNames=channelNames, normalization=analysis["DominanceNormalization"])
	utils.writeCsv(dominance, os.path.join(outputDir, "window_dominance.csv"))
	utils.writeCsv(Analysis.temporalAdjacencyTable(result.temporalLaplacian, labels), os.path.join(outputDir, "temporal_adjacency.csv"))

	try:
		withinMean, acrossMean = Analysis.regimeContrast(result.temporalLaplacian, labels)
		utils.writeCsv(pd.DataFrame({"WithinMean": [withinMean], "AcrossMean": [acrossMean]}), os.path.join(outputDir, "regime_contrast.csv"))
	except AnalysisError as e:
		logger.warning("Regime contrast skipped: {}".format(e))

	try:
		preMean, postMean, difference = Analysis.meanGraphContrast(result.spatialLaplacians, labels)
		utils.writeCsv(Analysis.differenceEdgeTable(preMean, postMean, channelNames), os.path.join(outputDir, "mean_graph_contrast.csv"))
	except AnalysisError as e:
		logger.warning("Mean graph contrast skipped: {}".format(e))
	manifest.endStage("Analysis")

	utils.dictToJsonFile(dict(settings, RecordingId=recordingId, LearnDir=learnDir), os.path.join(outputDir, "config.json"))
	manifest.write(outputDir)
	return scores, metrics


def runCompare(dirA, dirB, outputDir, reportPath=None, settings=None, logLevel="INFO"):
	'''
	Paired per-class Wilcoxon tests between the metrics tables found under dirA and dirB
	'''
	utils.createFolderPath(os.path.join(outputDir, "manifest.json"))
	logger = configureLogging(outputDir, logLevel)
	settings = loadPipelineSettings() if (settings is None) else settings
	if (reportPath is None):
		reportPath = os.path.join(outputDir, "compare.csv")

	manifest = RunManifest("compare", {"A": dirA, "B": dirB, "Report": reportPath, "Analysis": settings["Analysis"]})
	metricsA = Analysis.gatherMetricsTables(dirA)
	metricsB = Analysis.gatherMetricsTables(dirB)
	logger.info("Comparing {} recordings from \"{}\" with {} from \"{}\"".format(len(metricsA.index), dirA, len(metricsB.index), dirB))

	manifest.startStage()
	report = Analysis.compareMethods(metricsA, metricsB)
	histogram = Analysis.histogramTable([metricsA, metricsB], ["A", "B"], bins=int(settings["Analysis"]["HistogramBins"]))
	manifest.endStage("Compare")

	utils.writeCsv(report, reportPath)
	utils.writeCsv(histogram, os.path.join(outputDir, "histogram.csv"))
	utils.dictToJsonFile({"A": dirA, "B": dirB, "Analysis": settings["Analysis"]}, os.path.join(outputDir, "config.json"))
	manifest.write(outputDir)
	return report
