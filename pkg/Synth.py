'''
Ground-truth generator for SpaTeoGL experiments.

A SynthSpec describes piecewise-constant spatial graphs over temporal regimes. Each regime owns a ground-truth
graph, optionally boosted inside a planted SOZ community. Signals are drawn per sample from a zero-mean Gaussian
with covariance (L + ridge*I)^-1 of the regime active at that sample, plus isotropic noise, and written as a
continuous recording so the whole pipeline (load, preprocess, window, learn) can run on it.

Randomness comes from a single PCG64 stream seeded by SynthSpec.seed. Draw order: regime graphs (in regime order),
then signal blocks (in regime order), then noise.
'''
import copy
import os

import numpy as np
import pandas as pd
from scipy import linalg
from tqdm import tqdm

from PipelineErrors import PipelineError, InvalidSynthSpecError
from GraphClasses import EdgeWeightVector, edgeCount, edgeIndex, laplacianFromWeights, writeEdgeListCsv
from SignalIO import Recording, makeWindows, writeRecording
import utils


g_Logger = utils.getLogger("Synth")

g_Ridge = 1e-2


class SynthRegime:
	'''
	Inclusive 0-based window range with its ground-truth graph. weights=None draws a random graph
	'''
	def __init__(self, firstWindow, lastWindow, weights=None):
		self.firstWindow = int(firstWindow)
		self.lastWindow = int(lastWindow)
		self.weights = None if (weights is None) else np.array(weights, dtype=np.float64)

	def contains(self, window):
		return self.firstWindow <= window <= self.lastWindow

	def toDict(self):
		regimeDict = {"Windows": [self.firstWindow, self.lastWindow]}
		if (self.weights is not None):
			regimeDict["Edges"] = self.weights.tolist()
		return regimeDict


class SynthSpec:
	def __init__(self, nNodes=10, mWindows=13, samplesPerWindow=128, regimes=None, plantedCommunity=None, boostFactor=1.0, plantedRegimes=None,
				noiseStd=0.1, seed=0, sampleRate=250.0, overlapFraction=0.5, nPre=3, edgeProbability=0.3, paddingSamples=None, ridge=g_Ridge, name="synth"):
		self.nNodes = int(nNodes)
		self.mWindows = int(mWindows)
		self.samplesPerWindow = int(samplesPerWindow)
		self.nPre = int(nPre)
		if (regimes is None):
			regimes = [SynthRegime(0, self.nPre - 1), SynthRegime(self.nPre, self.mWindows - 1)] if (0 < self.nPre < self.mWindows) else [SynthRegime(0, self.mWindows - 1)]
		self.regimes = list(regimes)
		self.plantedCommunity = sorted(int(node) for node in plantedCommunity) if (plantedCommunity) else []
		self.boostFactor = float(boostFactor)
		self.plantedRegimes = list(plantedRegimes) if (plantedRegimes is not None) else list(range(1, len(self.regimes)))
		self.noiseStd = float(noiseStd)
		self.seed = int(seed)
		self.sampleRate = float(sampleRate)
		self.overlapFraction = float(overlapFraction)
		self.edgeProbability = float(edgeProbability)
		self.paddingSamples = self.samplesPerWindow if (paddingSamples is None) else int(paddingSamples)
		self.ridge = float(ridge)
		self.name = name
		self.validate()

	def validate(self):
		if (self.nNodes < 2):
			raise InvalidSynthSpecError("NNodes must be >= 2")
		if ((self.mWindows < 1) or (self.samplesPerWindow < 2)):
			raise InvalidSynthSpecError("MWindows must be >= 1 and SamplesPerWindow >= 2")
		if ((self.nPre < 0) or (self.nPre >= self.mWindows)):
			raise InvalidSynthSpecError("NPre={} leaves no onset window among {} windows".format(self.nPre, self.mWindows))
		if ((self.overlapFraction < 0) or (self.overlapFraction >= 1)):
			raise InvalidSynthSpecError("OverlapFraction must be in [0, 1)")
		if (self.noiseStd < 0):
			raise InvalidSynthSpecError("NoiseStd must be >= 0")
		if (not (0 < self.edgeProbability <= 1)):
			raise InvalidSynthSpecError("EdgeProbability must be in (0, 1]")
		if ((self.ridge <= 0) or (self.paddingSamples < 0) or (self.sampleRate <= 0)):
			raise InvalidSynthSpecError("Ridge and SampleRate must be positive, PaddingSamples nonnegative")

		#Regime ranges must tile 0..M-1 in order
		nextWindow = 0
		for regime in sorted(self.regimes, key=lambda regime: regime.firstWindow):
			if ((regime.firstWindow != nextWindow) or (regime.lastWindow < regime.firstWindow)):
				raise InvalidSynthSpecError("Regime ranges do not partition windows 0..{}: gap or overlap at window {}".format(self.mWindows - 1, nextWindow))
			if (regime.weights is not None):
				if (regime.weights.shape[0] != edgeCount(self.nNodes)):
					raise InvalidSynthSpecError("Regime {}-{} has {} edges, expected {}".format(regime.firstWindow, regime.lastWindow, regime.weights.shape[0], edgeCount(self.nNodes)))
				if ((np.any(regime.weights < 0)) or (np.sum(regime.weights) <= 0)):
					raise InvalidSynthSpecError("Regime {}-{} edge weights must be nonnegative and not all zero".format(regime.firstWindow, regime.lastWindow))
			nextWindow = regime.lastWindow + 1
		if (nextWindow != self.mWindows):
			raise InvalidSynthSpecError("Regime ranges end at window {}, expected {}".format(nextWindow - 1, self.mWindows - 1))
		self.regimes = sorted(self.regimes, key=lambda regime: regime.firstWindow)

		if (self.boostFactor < 1):
			raise InvalidSynthSpecError("Boost factor must be >= 1, got {}".format(self.boostFactor))
		if ((len(set(self.plantedCommunity)) != len(self.plantedCommunity)) or any((node < 0) or (node >= self.nNodes) for node in self.plantedCommunity)):
			raise InvalidSynthSpecError("Planted community {} is not a set of node indices below {}".format(self.plantedCommunity, self.nNodes))
		if (any((regime < 0) or (regime >= len(self.regimes)) for regime in self.plantedRegimes)):
			raise InvalidSynthSpecError("Planted regimes {} out of range for {} regimes".format(self.plantedRegimes, len(self.regimes)))

	@classmethod
	def fromSettings(cls, settings, name="synth"):
		'''
		Builds a spec from the "settings" dict of a SynthSettings file
		'''
		try:
			regimes = None
			if ("Regimes" in settings):
				regimes = [SynthRegime(regime["Windows"][0], regime["Windows"][1], regime.get("Edges")) for regime in settings["Regimes"]]
			community = settings.get("PlantedCommunity", {}) or {}
			return cls(
				nNodes=utils.getSetting(settings, "NNodes", 10),
				mWindows=utils.getSetting(settings, "MWindows", 13),
				samplesPerWindow=utils.getSetting(settings, "SamplesPerWindow", 128),
				regimes=regimes,
				plantedCommunity=community.get("Nodes"),
				boostFactor=community.get("Boost", 1.0),
				plantedRegimes=community.get("Regimes"),
				noiseStd=utils.getSetting(settings, "NoiseStd", 0.1),
				seed=utils.getSetting(settings, "Seed", 0),
				sampleRate=utils.getSetting(settings, "SampleRate", 250.0),
				overlapFraction=utils.getSetting(settings, "OverlapFraction", 0.5),
				nPre=utils.getSetting(settings, "NPre", 3),
				edgeProbability=utils.getSetting(settings, "EdgeProbability", 0.3),
				paddingSamples=settings.get("PaddingSamples"),
				ridge=utils.getSetting(settings, "Ridge", g_Ridge),
				name=name)
		except PipelineError:
			raise
		except (KeyError, IndexError, TypeError, ValueError) as e:
			raise InvalidSynthSpecError("Malformed synth settings: {}".format(e))

	@classmethod
	def fromJsonFile(cls, path):
		settingsDict = utils.loadJsonFile(path)
		if ("settings" not in settingsDict):
			raise InvalidSynthSpecError("\"{}\" has no \"settings\" section".format(path))
		return cls.fromSettings(settingsDict["settings"], name=settingsDict.get("name", "synth"))

	def withSeed(self, seed):
		spec = copy.deepcopy(self)
		spec.seed = int(seed)
		return spec

	def windowStride(self):
		return int(round(self.samplesPerWindow*(1.0 - self.overlapFraction)))

	def windowRegimes(self):
		return [next(r for r, regime in enumerate(self.regimes) if regime.contains(m)) for m in range(self.mWindows)]

	def toDict(self):
		return {
			"NNodes": self.nNodes,
			"MWindows": self.mWindows,
			"SamplesPerWindow": self.samplesPerWindow,
			"SampleRate": self.sampleRate,
			"OverlapFraction": self.overlapFraction,
			"NPre": self.nPre,
			"NoiseStd": self.noiseStd,
			"Seed": self.seed,
			"EdgeProbability": self.edgeProbability,
			"PaddingSamples": self.paddingSamples,
			"Ridge": self.ridge,
			"Regimes": [regime.toDict() for regime in self.regimes],
			"PlantedCommunity": {"Nodes": self.plantedCommunity, "Boost": self.boostFactor, "Regimes": self.plantedRegimes}
		}

	def __str__(self):
		return "SynthSpec_{}(N={}, M={}, K={}, regimes={}, community={}, boost={}, seed={})".format(utils.shortHash(self.toDict()), self.nNodes, self.mWindows, self.samplesPerWindow, len(self.regimes), self.plantedCommunity, self.boostFactor, self.seed)


class SynthOutput:
	def __init__(self, spec, recording, windowedRecording, truthGraphs, windowRegimes, sozMask):
		self.spec = spec
		self.recording = recording
		self.windowedRecording = windowedRecording
		self.truthGraphs = truthGraphs
		self.windowRegimes = windowRegimes
		self.sozMask = sozMask

	def truthLaplacians(self):
		return [laplacianFromWeights(w) for w in self.truthGraphs]


#######################
# Sampling
#######################
def makeGenerator(seed):
	return np.random.Generator(np.random.PCG64(int(seed)))


def randomGraph(nNodes, edgeProbability, generator):
	'''
	Erdos-Renyi support with Uniform(0.5, 1.5) weights, scaled to sum n/2. Never empty
	'''
	nEdges = edgeCount(nNodes)
	present = generator.random(nEdges) < edgeProbability
	weights = generator.uniform(0.5, 1.5, nEdges)*present
	if (not np.any(present)):
		weights[generator.integers(nEdges)] = 1.0
	return weights*(nNodes/2.0)/np.sum(weights)


def plantCommunity(weights, nNodes, community, boostFactor):
	'''
	Sets every edge inside the community to boostFactor times the mean present edge weight, then rescales to sum n/2
	'''
	if ((boostFactor == 1.0) or (len(community) < 2)):
		return np.array(weights)
	weights = np.array(weights, dtype=np.float64)
	rows, cols = edgeIndex(nNodes)
	members = np.zeros(nNodes, dtype=bool)
	members[community] = True
	inside = members[rows] & members[cols]
	meanWeight = float(np.mean(weights[weights > 0]))
	weights[inside] = boostFactor*meanWeight
	return weights*(nNodes/2.0)/np.sum(weights)


def sampleGmrf(L, nSamples, generator, ridge=g_Ridge):
	'''
	nNodes x nSamples draws from N(0, (L + ridge*I)^-1) through the Cholesky factor of the precision matrix
	'''
	matrix = L.matrix if (hasattr(L, "matrix")) else np.asarray(L)
	precision = matrix + ridge*np.eye(matrix.shape[0])
	factor = linalg.cholesky(precision, lower=True)
	white = generator.standard_normal((matrix.shape[0], nSamples))
	return linalg.solve_triangular(factor, white, lower=True, trans="T")


def generate(spec):
	'''
	Deterministic given spec.seed. Returns a SynthOutput
	'''
	generator = makeGenerator(spec.seed)

	truthGraphs = []
	for r, regime in enumerate(spec.regimes):
		weights = regime.weights if (regime.weights is not None) else randomGraph(spec.nNodes, spec.edgeProbability, generator)
		weights = weights*(spec.nNodes/2.0)/np.sum(weights)
		if (r in spec.plantedRegimes):
			weights = plantCommunity(weights, spec.nNodes, spec.plantedCommunity, spec.boostFactor)
		truthGraphs.append(EdgeWeightVector(spec.nNodes, weights))

	#Sample t belongs to the regime of the latest window starting at or before t
	stride = spec.windowStride()
	if (stride < 1):
		raise InvalidSynthSpecError("Overlap {} leaves a stride below one sample".format(spec.overlapFraction))
	windowRegimes = spec.windowRegimes()
	nSamples = 2*spec.paddingSamples + (spec.mWindows - 1)*stride + spec.samplesPerWindow
	windowIndex = np.clip((np.arange(nSamples) - spec.paddingSamples)//stride, 0, spec.mWindows - 1)
	sampleRegimes = np.array(windowRegimes)[windowIndex]

	samples = np.zeros((spec.nNodes, nSamples))
	for r, w in enumerate(truthGraphs):
		columns = np.nonzero(sampleRegimes == r)[0]
		if (len(columns) > 0):
			samples[:, columns] = sampleGmrf(laplacianFromWeights(w), len(columns), generator, spec.ridge)
	if (spec.noiseStd > 0):
		samples += spec.noiseStd*generator.standard_normal(samples.shape)

	sozMask = np.zeros(spec.nNodes, dtype=bool)
	sozMask[spec.plantedCommunity] = True
	channelNames = ["E{:02d}".format(i) for i in range(spec.nNodes)]
	onsetSample = spec.paddingSamples + spec.nPre*stride
	recording = Recording(channelNames, spec.sampleRate, samples, onsetSample, sozLabels=sozMask, recordingId="{}_seed{}".format(spec.name, spec.seed))

	windowMs = spec.samplesPerWindow*1000.0/spec.sampleRate
	windowedRecording = makeWindows(recording, windowMs=windowMs, overlapFraction=spec.overlapFraction, nPre=spec.nPre, nPost=spec.mWindows - spec.nPre - 1)

	g_Logger.debug("Generated {}".format(spec))
	return SynthOutput(spec, recording, windowedRecording, truthGraphs, windowRegimes, sozMask)


def writeSynthOutput(output, outputDir, recordingFormat="csv"):
	'''
	recording.<csv|bin> with its sidecar, plus the ground truth under truth/
	'''
	extension = "csv" if (recordingFormat == "csv") else "bin"
	recordingPath = os.path.join(outputDir, "recording.{}".format(extension))
	writeRecording(output.recording, recordingPath, recordingFormat)

	channelNames = output.recording.channelNames
	for r, w in enumerate(output.truthGraphs):
		writeEdgeListCsv(w, os.path.join(outputDir, "truth", "regime_{:02d}_edges.csv".format(r)), channelNames)
	utils.writeCsv(pd.DataFrame({"Channel": channelNames, "Soz": output.sozMask}), os.path.join(outputDir, "truth", "soz_mask.csv"))
	labels = [label.value for label in output.windowedRecording.windowLabels]
	utils.writeCsv(pd.DataFrame({"Window": np.arange(len(labels)), "Regime": output.windowRegimes, "Label": labels}), os.path.join(outputDir, "truth", "window_regimes.csv"))
	utils.dictToJsonFile({"name": output.spec.name, "settings": output.spec.toDict()}, os.path.join(outputDir, "synth_spec.json"))
	return recordingPath


def runTrials(spec, nTrials, trialFunction, showProgress=False):
	'''
	Calls trialFunction(generate(spec with seed + trialIndex), trialIndex) for each trial and returns the results
	'''
	results = []
	for trialIndex in tqdm(range(int(nTrials)), ascii=False, ncols=80, disable=not showProgress):
		output = generate(spec.withSeed(spec.seed + trialIndex))
		results.append(trialFunction(output, trialIndex))
	return results
