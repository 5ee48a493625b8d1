'''
Evaluation of learned graphs: electrode scoring, per-class metrics, window dominance, temporal-regime contrast,
pre/post-onset graph averaging and paired comparison of two methods.

Every output is a pandas table written by the pipeline runner as CSV.
'''
import glob
import os
from enum import Enum, unique

import numpy as np
import pandas as pd
from scipy import stats
from sortedcontainers import SortedList

from PipelineErrors import AnalysisError, DimensionMismatchError, InsufficientPairsError
from GraphClasses import edgeIndex, laplacianMean, weightsFromLaplacian
from SignalIO import WINDOW_LABEL
import utils


g_Logger = utils.getLogger("Analysis")

g_EdgeThreshold = 1e-4
g_ExactWilcoxonMax = 25
g_MinPairs = 5

g_MetricsColumns = ["Recording", "Method", "Class0Accuracy", "Class0Std", "Class1Accuracy", "Class1Std", "TotalAccuracy", "TotalStd", "Class0Support", "Class1Support"]
g_ActiveLabels = (WINDOW_LABEL.ONSET, WINDOW_LABEL.POST_ONSET)


@unique
class SCORE_MODE(Enum):
	DEGREE = "degree"
	WEIGHTED_DEGREE = "weighted_degree"


@unique
class DOMINANCE_NORMALIZATION(Enum):
	GROUP = "group"
	TOP = "top"


class ElectrodeScore:
	def __init__(self, channel, score, predictedSoz=False, trueSoz=False):
		if (not (score >= 0)):
			raise AnalysisError("Electrode score must be nonnegative, got {} for {}".format(score, channel))
		self.channel = str(channel)
		self.score = float(score)
		self.predictedSoz = bool(predictedSoz)
		self.trueSoz = bool(trueSoz)

	def withPrediction(self, predictedSoz):
		return ElectrodeScore(self.channel, self.score, predictedSoz, self.trueSoz)

	def __str__(self):
		return "ElectrodeScore({}, score={:.6g}, predicted={}, true={})".format(self.channel, self.score, self.predictedSoz, self.trueSoz)

	def __repr__(self):
		return str(self)


class ClassMetrics:
	'''
	Per-class accuracies of a binary SOZ labeling. Class 1 is SOZ.
	An accuracy is NaN when its class has no support.
	'''
	def __init__(self, class0Accuracy, class1Accuracy, totalAccuracy, class0Support, class1Support):
		self.class0Accuracy = float(class0Accuracy)
		self.class1Accuracy = float(class1Accuracy)
		self.totalAccuracy = float(totalAccuracy)
		self.class0Support = int(class0Support)
		self.class1Support = int(class1Support)

		support = self.class0Support + self.class1Support
		if (support > 0):
			weighted = 0.0
			if (self.class0Support > 0):
				weighted += self.class0Support*self.class0Accuracy
			if (self.class1Support > 0):
				weighted += self.class1Support*self.class1Accuracy
			if (abs(weighted/support - self.totalAccuracy) > 1e-12):
				raise AnalysisError("Inconsistent metrics: total {} vs class-weighted {}".format(self.totalAccuracy, weighted/support))

	@classmethod
	def fromCounts(cls, truePositive, falseNegative, trueNegative, falsePositive):
		class1Support = truePositive + falseNegative
		class0Support = trueNegative + falsePositive
		support = class0Support + class1Support
		class1Accuracy = truePositive/class1Support if (class1Support > 0) else float("nan")
		class0Accuracy = trueNegative/class0Support if (class0Support > 0) else float("nan")
		totalAccuracy = (truePositive + trueNegative)/support if (support > 0) else float("nan")
		return cls(class0Accuracy, class1Accuracy, totalAccuracy, class0Support, class1Support)

	def toDict(self):
		return {
			"Class0Accuracy": self.class0Accuracy,
			"Class1Accuracy": self.class1Accuracy,
			"TotalAccuracy": self.totalAccuracy,
			"Class0Support": self.class0Support,
			"Class1Support": self.class1Support
		}

	def __str__(self):
		return "ClassMetrics(class0={:.4f}, class1={:.4f}, total={:.4f}, support=({}, {}))".format(self.class0Accuracy, self.class1Accuracy, self.totalAccuracy, self.class0Support, self.class1Support)


#######################
# Helpers
#######################
def _labelList(labels, nWindows):
	labels = [WINDOW_LABEL(label) for label in labels]
	if (len(labels) != nWindows):
		raise DimensionMismatchError("{} window labels for {} windows".format(len(labels), nWindows))
	return labels


def _rankKey(entry):
	return (-entry[0], entry[1], entry[2])


def rankChannels(scores, channelNames):
	'''
	Channel indices by descending score. Scores equal to 12 significant digits tie, and ties break on channel name
	'''
	scale = max(float(np.max(np.abs(scores))), 1e-300) if (len(scores) > 0) else 1.0
	ranked = SortedList(key=_rankKey)
	for i, (score, channel) in enumerate(zip(scores, channelNames)):
		ranked.add((round(float(score)/scale, 12), channel, i))
	return [entry[2] for entry in ranked]


def nodeScores(L, mode, edgeThreshold=g_EdgeThreshold):
	'''
	Degree (count of edges above edgeThreshold times the mean edge weight) or weighted degree of every node
	'''
	mode = SCORE_MODE(mode)
	if (mode == SCORE_MODE.WEIGHTED_DEGREE):
		return np.maximum(L.degrees(), 0.0)

	weights = weightsFromLaplacian(L).weights
	if (len(weights) == 0):
		return np.zeros(L.nNodes)
	threshold = edgeThreshold*float(np.mean(weights))
	present = (weights > threshold).astype(np.float64)
	rows, cols = edgeIndex(L.nNodes)
	counts = np.zeros(L.nNodes)
	np.add.at(counts, rows, present)
	np.add.at(counts, cols, present)
	return counts


#######################
# Electrode scoring
#######################
def scoreElectrodes(spatialLaplacians, labels, mode=SCORE_MODE.WEIGHTED_DEGREE, channelNames=None, sozMask=None, edgeThreshold=g_EdgeThreshold):
	'''
	Mean node score over the Onset and PostOnset windows. Returns ElectrodeScores ranked by descending score
	'''
	labels = _labelList(labels, len(spatialLaplacians))
	activeWindows = [m for m, label in enumerate(labels) if label in g_ActiveLabels]
	if (len(activeWindows) == 0):
		raise AnalysisError("No Onset or PostOnset windows to score")

	nNodes = spatialLaplacians[0].nNodes
	if (channelNames is None):
		channelNames = ["{:03d}".format(i) for i in range(nNodes)]
	if (sozMask is None):
		sozMask = np.zeros(nNodes, dtype=bool)
	if ((len(channelNames) != nNodes) or (len(sozMask) != nNodes)):
		raise DimensionMismatchError("Channel names and SOZ mask must have {} entries".format(nNodes))

	scores = np.mean([nodeScores(spatialLaplacians[m], mode, edgeThreshold) for m in activeWindows], axis=0)
	order = rankChannels(scores, channelNames)
	return [ElectrodeScore(channelNames[i], scores[i], trueSoz=sozMask[i]) for i in order]


def classifyTopK(scores, k=None):
	'''
	Marks the k highest ranked electrodes as SOZ. k defaults to the number of labeled SOZ electrodes
	'''
	if (k is None):
		k = sum(1 for score in scores if score.trueSoz)
	if ((k < 0) or (k > len(scores))):
		raise AnalysisError("k={} out of range for {} electrodes".format(k, len(scores)))
	order = rankChannels([score.score for score in scores], [score.channel for score in scores])
	return [scores[i].withPrediction(rank < k) for rank, i in enumerate(order)]


def perClassMetrics(predictions, truths):
	predictions = np.array(predictions, dtype=bool)
	truths = np.array(truths, dtype=bool)
	if (predictions.shape != truths.shape):
		raise DimensionMismatchError("{} predictions for {} labels".format(predictions.shape, truths.shape))

	truePositive = int(np.sum(predictions & truths))
	falseNegative = int(np.sum(~predictions & truths))
	trueNegative = int(np.sum(~predictions & ~truths))
	falsePositive = int(np.sum(predictions & ~truths))
	return ClassMetrics.fromCounts(truePositive, falseNegative, trueNegative, falsePositive)


def scoresTable(scores):
	return pd.DataFrame({
		"Rank": np.arange(1, len(scores) + 1),
		"Channel": [score.channel for score in scores],
		"Score": [score.score for score in scores],
		"PredictedSoz": [score.predictedSoz for score in scores],
		"TrueSoz": [score.trueSoz for score in scores]
	})


#######################
# Window and regime summaries
#######################
def windowDominance(spatialLaplacians, labels, sozMask, topFraction=0.25, channelNames=None, normalization=DOMINANCE_NORMALIZATION.GROUP):
	'''
	Per window, takes the topFraction of electrodes by weighted degree and reports the share of SOZ and of
	non-SOZ electrodes among them. GROUP normalization divides by the size of each electrode group,
	TOP normalization by the size of the top set.
	'''
	labels = _labelList(labels, len(spatialLaplacians))
	normalization = DOMINANCE_NORMALIZATION(normalization)
	sozMask = np.array(sozMask, dtype=bool)
	nNodes = spatialLaplacians[0].nNodes
	if (sozMask.shape[0] != nNodes):
		raise DimensionMismatchError("SOZ mask has {} entries for {} electrodes".format(sozMask.shape[0], nNodes))
	if (channelNames is None):
		channelNames = ["{:03d}".format(i) for i in range(nNodes)]

	topCount = int(round(topFraction*nNodes))
	if (topCount < 1):
		raise AnalysisError("Top fraction {} of {} electrodes is an empty set".format(topFraction, nNodes))
	topCount = min(topCount, nNodes)
	nSoz = int(np.sum(sozMask))
	nNonSoz = nNodes - nSoz

	rows = []
	for m, (L, label) in enumerate(zip(spatialLaplacians, labels)):
		order = rankChannels(nodeScores(L, SCORE_MODE.WEIGHTED_DEGREE), channelNames)
		top = np.array(order[:topCount])
		sozInTop = int(np.sum(sozMask[top]))
		nonSozInTop = topCount - sozInTop
		if (normalization == DOMINANCE_NORMALIZATION.GROUP):
			sozRatio = sozInTop/nSoz if (nSoz > 0) else float("nan")
			nonSozRatio = nonSozInTop/nNonSoz if (nNonSoz > 0) else float("nan")
		else:
			sozRatio = sozInTop/topCount
			nonSozRatio = nonSozInTop/topCount
		rows.append({"Window": m, "Label": label.value, "TopCount": topCount, "SozInTop": sozInTop, "SozRatio": sozRatio, "NonSozRatio": nonSozRatio})

	return pd.DataFrame(rows, columns=["Window", "Label", "TopCount", "SozInTop", "SozRatio", "NonSozRatio"])


def regimeContrast(temporal, labels):
	'''
	Returns (withinMean, acrossMean): mean temporal weight inside Onset+PostOnset, and between that group and PreOnset
	'''
	labels = _labelList(labels, temporal.nNodes)
	active = [m for m, label in enumerate(labels) if label in g_ActiveLabels]
	pre = [m for m, label in enumerate(labels) if label == WINDOW_LABEL.PRE_ONSET]
	if ((temporal.nNodes < 3) or (len(active) < 2) or (len(pre) < 1)):
		raise AnalysisError("Regime contrast needs >= 2 Onset/PostOnset windows and >= 1 PreOnset window out of M >= 3 (got {} and {})".format(len(active), len(pre)))

	A = temporal.adjacency()
	within = [A[i, j] for k, i in enumerate(active) for j in active[k + 1:]]
	across = [A[i, j] for i in active for j in pre]
	return float(np.mean(within)), float(np.mean(across))


def temporalAdjacencyTable(temporal, labels=None):
	'''
	Long-format temporal adjacency (every ordered window pair) for heat-map plotting
	'''
	A = temporal.adjacency()
	nWindows = temporal.nNodes
	rows, cols = np.meshgrid(np.arange(nWindows), np.arange(nWindows), indexing="ij")
	table = pd.DataFrame({"WindowI": rows.reshape(-1), "WindowJ": cols.reshape(-1), "Weight": A.reshape(-1)})
	if (labels is not None):
		labels = _labelList(labels, nWindows)
		table["LabelI"] = [labels[i].value for i in table["WindowI"]]
		table["LabelJ"] = [labels[j].value for j in table["WindowJ"]]
	return table


def meanGraphContrast(spatialLaplacians, labels):
	'''
	Returns (preMean, postMean, difference) over the PreOnset and PostOnset windows. difference = postMean - preMean
	'''
	labels = _labelList(labels, len(spatialLaplacians))
	pre = [L for L, label in zip(spatialLaplacians, labels) if label == WINDOW_LABEL.PRE_ONSET]
	post = [L for L, label in zip(spatialLaplacians, labels) if label == WINDOW_LABEL.POST_ONSET]
	if ((len(pre) == 0) or (len(post) == 0)):
		raise AnalysisError("Mean graph contrast needs PreOnset and PostOnset windows (got {} and {})".format(len(pre), len(post)))

	preMean = laplacianMean(pre)
	postMean = laplacianMean(post)
	return preMean, postMean, postMean.matrix - preMean.matrix


def differenceEdgeTable(preMean, postMean, channelNames=None):
	'''
	Edge list of the pre/post mean graphs sorted by descending |post - pre|
	'''
	rows, cols = edgeIndex(preMean.nNodes)
	preWeights = weightsFromLaplacian(preMean).weights
	postWeights = weightsFromLaplacian(postMean).weights
	table = pd.DataFrame({"i": rows, "j": cols, "PreWeight": preWeights, "PostWeight": postWeights, "Difference": postWeights - preWeights})
	if (channelNames is not None):
		table.insert(2, "node_i", [channelNames[i] for i in rows])
		table.insert(3, "node_j", [channelNames[j] for j in cols])
	table["AbsDifference"] = np.abs(table["Difference"])
	table = table.sort_values(["AbsDifference", "i", "j"], ascending=[False, True, True], kind="mergesort")
	return table.drop(columns=["AbsDifference"]).reset_index(drop=True)


#######################
# Metrics tables and method comparison
#######################
def metricsRow(recordingId, method, metricsList):
	'''
	Metrics table row: mean and standard deviation of each class accuracy over folds (one entry gives std 0)
	'''
	def meanStd(values):
		values = np.array(values, dtype=np.float64)
		values = values[np.isfinite(values)]
		if (len(values) == 0):
			return float("nan"), float("nan")
		return float(np.mean(values)), float(np.std(values))

	class0Mean, class0Std = meanStd([metrics.class0Accuracy for metrics in metricsList])
	class1Mean, class1Std = meanStd([metrics.class1Accuracy for metrics in metricsList])
	totalMean, totalStd = meanStd([metrics.totalAccuracy for metrics in metricsList])
	return {
		"Recording": recordingId,
		"Method": method,
		"Class0Accuracy": class0Mean,
		"Class0Std": class0Std,
		"Class1Accuracy": class1Mean,
		"Class1Std": class1Std,
		"TotalAccuracy": totalMean,
		"TotalStd": totalStd,
		"Class0Support": int(sum(metrics.class0Support for metrics in metricsList)),
		"Class1Support": int(sum(metrics.class1Support for metrics in metricsList))
	}


def metricsTable(rows):
	return pd.DataFrame(rows, columns=g_MetricsColumns)


def gatherMetricsTables(rootDir):
	'''
	Concatenates every metrics.csv below rootDir
	'''
	if (os.path.isfile(rootDir)):
		paths = [rootDir]
	else:
		paths = sorted(glob.glob(os.path.join(rootDir, "**", "metrics.csv"), recursive=True))
	if (len(paths) == 0):
		raise AnalysisError("No metrics.csv found under \"{}\"".format(rootDir))

	tables = [utils.readCsv(path, dtype={"Recording": str, "Method": str}) for path in paths]
	return pd.concat(tables, ignore_index=True)


def wilcoxonSignedRank(a, b):
	'''
	Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are dropped; if none remain p = 1.
	Exact null distribution up to 25 pairs, normal approximation with tie correction above.
	Returns (statistic, pValue) with statistic = min(W+, W-).
	'''
	differences = np.array(a, dtype=np.float64) - np.array(b, dtype=np.float64)
	differences = differences[differences != 0]
	nonZero = len(differences)
	if (nonZero == 0):
		return 0.0, 1.0

	tied = len(np.unique(np.abs(differences))) < nonZero
	if ((nonZero > g_ExactWilcoxonMax) or (not tied)):
		method = "exact" if (nonZero <= g_ExactWilcoxonMax) else "approx"
		result = stats.wilcoxon(differences, zero_method="wilcox", correction=False, alternative="two-sided", method=method)
		return float(result.statistic), float(min(1.0, result.pvalue))

	#scipy has no exact mode with tied ranks: enumerate the null with midranks counted in half units
	ranks = stats.rankdata(np.abs(differences))
	positive = float(np.sum(ranks[differences > 0]))
	negative = float(np.sum(ranks[differences < 0]))
	halfRanks = np.rint(2*ranks).astype(np.int64)
	total = int(np.sum(halfRanks))
	counts = np.zeros(total + 1, dtype=np.int64)
	counts[0] = 1
	for rank in halfRanks:
		shifted = np.zeros_like(counts)
		shifted[rank:] = counts[:total + 1 - rank]
		counts = counts + shifted

	observed = int(np.sum(halfRanks[differences > 0]))
	distance = abs(2*observed - total)
	sums = np.arange(total + 1)
	extreme = np.abs(2*sums - total) >= distance
	pValue = float(np.sum(counts[extreme]))/float(2**nonZero)
	return min(positive, negative), min(1.0, pValue)


def compareMethods(metricsA, metricsB):
	'''
	Pairs two metrics tables by Recording and runs a Wilcoxon signed-rank test per class
	'''
	paired = pd.merge(metricsA, metricsB, on="Recording", suffixes=("A", "B"))
	if (len(paired.index) < g_MinPairs):
		raise InsufficientPairsError("Method comparison needs >= {} paired recordings, found {}".format(g_MinPairs, len(paired.index)))

	rows = []
	for className, column in (("Class0", "Class0Accuracy"), ("Class1", "Class1Accuracy"), ("Total", "TotalAccuracy")):
		valuesA = paired[column + "A"].to_numpy(dtype=np.float64)
		valuesB = paired[column + "B"].to_numpy(dtype=np.float64)
		finite = np.isfinite(valuesA) & np.isfinite(valuesB)
		if (np.sum(finite) < g_MinPairs):
			raise InsufficientPairsError("{}: only {} recordings have both accuracies".format(className, int(np.sum(finite))))
		statistic, pValue = wilcoxonSignedRank(valuesA[finite], valuesB[finite])
		rows.append({
			"Class": className,
			"NPairs": int(np.sum(finite)),
			"MeanA": float(np.mean(valuesA[finite])),
			"MeanB": float(np.mean(valuesB[finite])),
			"Statistic": statistic,
			"PValue": pValue
		})
		g_Logger.info("{}: n={} p={:.6g}".format(className, int(np.sum(finite)), pValue))

	return pd.DataFrame(rows, columns=["Class", "NPairs", "MeanA", "MeanB", "Statistic", "PValue"])


def histogramTable(metricsTables, methodNames, bins=10):
	'''
	Normalized histograms of per-recording accuracies on [0, 1], per method and class
	'''
	edges = np.linspace(0.0, 1.0, bins + 1)
	rows = []
	for table, methodName in zip(metricsTables, methodNames):
		for className, column in (("Class0", "Class0Accuracy"), ("Class1", "Class1Accuracy")):
			values = table[column].to_numpy(dtype=np.float64)
			values = values[np.isfinite(values)]
			counts, _ = np.histogram(values, bins=edges)
			density = counts/max(1, len(values))
			for k in range(bins):
				rows.append({"Method": methodName, "Class": className, "BinLeft": edges[k], "BinRight": edges[k + 1], "Count": int(counts[k]), "Fraction": float(density[k])})
	return pd.DataFrame(rows, columns=["Method", "Class", "BinLeft", "BinRight", "Count", "Fraction"])
