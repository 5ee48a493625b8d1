'''
Electrode scoring, per-class metrics, window and regime summaries and the paired method comparison
'''
import itertools
import os

import numpy as np
import pandas as pd
import pytest
from scipy import stats

import Analysis as an
import GraphClasses as gc
import utils
from SignalIO import WINDOW_LABEL
from PipelineErrors import AnalysisError, InsufficientPairsError


g_Pre = WINDOW_LABEL.PRE_ONSET
g_Onset = WINDOW_LABEL.ONSET
g_Post = WINDOW_LABEL.POST_ONSET


def _laplacian(nNodes, edgeWeights):
	'''
	edgeWeights: {(i, j): weight}
	'''
	rows, cols = gc.edgeIndex(nNodes)
	weights = np.zeros(gc.edgeCount(nNodes))
	for e, (i, j) in enumerate(zip(rows, cols)):
		weights[e] = edgeWeights.get((int(i), int(j)), 0.0)
	return gc.laplacianFromWeights(gc.EdgeWeightVector(nNodes, weights))


def _star(nNodes, center):
	weight = (nNodes/2.0)/(nNodes - 1)
	return _laplacian(nNodes, {(min(center, j), max(center, j)): weight for j in range(nNodes) if j != center})


def _uniform(nNodes):
	return gc.laplacianFromWeights(gc.EdgeWeightVector.uniform(nNodes))


def _exactWilcoxonOracle(a, b):
	'''
	Two-sided p-value by enumerating every sign pattern
	'''
	differences = np.array(a, dtype=float) - np.array(b, dtype=float)
	differences = differences[differences != 0]
	ranks = stats.rankdata(np.abs(differences))
	total = np.sum(ranks)
	observed = np.sum(ranks[differences > 0])
	extreme = 0
	for signs in itertools.product([False, True], repeat=len(ranks)):
		positive = np.sum(ranks[list(signs)]) if (any(signs)) else 0.0
		if (abs(positive - total/2.0) >= abs(observed - total/2.0)):
			extreme += 1
	return extreme/2.0**len(ranks)


def _metricsTable(class0, class1, prefix="r"):
	rows = []
	for k, (accuracy0, accuracy1) in enumerate(zip(class0, class1)):
		rows.append({"Recording": "{}{:02d}".format(prefix, k), "Method": "M", "Class0Accuracy": accuracy0, "Class0Std": 0.0, "Class1Accuracy": accuracy1, "Class1Std": 0.0, "TotalAccuracy": 0.5*(accuracy0 + accuracy1), "TotalStd": 0.0, "Class0Support": 8, "Class1Support": 8})
	return an.metricsTable(rows)


#######################
# Electrode scores
#######################
def testHubRanksFirst():
	spatial = [_star(5, 3), _star(5, 3)]
	for mode in (an.SCORE_MODE.WEIGHTED_DEGREE, an.SCORE_MODE.DEGREE):
		scores = an.scoreElectrodes(spatial, [g_Onset, g_Post], mode=mode, channelNames=["a", "b", "c", "d", "e"])
		assert scores[0].channel == "d"


def testUniformGraphsTieBreakOnChannelName():
	spatial = [_uniform(4)]*3
	scores = an.scoreElectrodes(spatial, [g_Pre, g_Onset, g_Post], channelNames=["C", "A", "D", "B"])
	assert [score.channel for score in scores] == ["A", "B", "C", "D"]
	assert len(set(round(score.score, 12) for score in scores)) == 1


def testOnlyActiveWindowsAreScored():
	spatial = [_star(4, 0), _star(4, 2), _star(4, 2)]
	scores = an.scoreElectrodes(spatial, [g_Pre, g_Onset, g_Post])
	assert scores[0].channel == "002"
	with pytest.raises(AnalysisError):
		an.scoreElectrodes(spatial, [g_Pre, g_Pre, g_Pre])


def testDegreeModeCountsEdges():
	L = _laplacian(4, {(0, 1): 1.0, (0, 2): 0.5, (1, 2): 0.5})
	np.testing.assert_array_equal(an.nodeScores(L, an.SCORE_MODE.DEGREE), [2.0, 2.0, 2.0, 0.0])
	np.testing.assert_allclose(an.nodeScores(L, an.SCORE_MODE.WEIGHTED_DEGREE), [1.5, 1.5, 1.0, 0.0])


def testScoresPermuteWithElectrodes():
	rng = np.random.default_rng(80)
	spatial = []
	for m in range(3):
		weights = rng.random(10)
		spatial.append(gc.laplacianFromWeights(gc.EdgeWeightVector(5, weights*2.5/weights.sum())))
	names = ["E0", "E1", "E2", "E3", "E4"]
	permutation = [4, 2, 0, 3, 1]
	permuted = [gc.GraphLaplacian(L.matrix[np.ix_(permutation, permutation)]) for L in spatial]

	original = {score.channel: score.score for score in an.scoreElectrodes(spatial, [g_Onset, g_Post, g_Post], channelNames=names)}
	relabeled = {score.channel: score.score for score in an.scoreElectrodes(permuted, [g_Onset, g_Post, g_Post], channelNames=[names[i] for i in permutation])}
	assert original.keys() == relabeled.keys()
	for channel in original:
		assert relabeled[channel] == pytest.approx(original[channel], rel=1e-12)


def testScalingKeepsRanking():
	rng = np.random.default_rng(81)
	weights = rng.random(15)
	L = gc.laplacianFromWeights(gc.EdgeWeightVector(6, weights*3.0/weights.sum()))
	scaled = gc.GraphLaplacian(7.5*L.matrix)
	first = [score.channel for score in an.scoreElectrodes([L], [g_Onset])]
	second = [score.channel for score in an.scoreElectrodes([scaled], [g_Onset])]
	assert first == second


#######################
# Top-k and metrics
#######################
def _scores(values, truths):
	return [an.ElectrodeScore("E{:02d}".format(i), value, trueSoz=truth) for i, (value, truth) in enumerate(zip(values, truths))]


def testTopKMarksExactlyK():
	rng = np.random.default_rng(82)
	scores = _scores(rng.random(10), [False]*10)
	for k in range(11):
		assert sum(score.predictedSoz for score in an.classifyTopK(scores, k)) == k
	with pytest.raises(AnalysisError):
		an.classifyTopK(scores, 11)


def testPerfectRanking():
	scores = _scores([9, 8, 7, 1, 1, 1, 1, 1, 1, 1], [True]*3 + [False]*7)
	classified = an.classifyTopK(scores)
	metrics = an.perClassMetrics([score.predictedSoz for score in classified], [score.trueSoz for score in classified])
	assert (metrics.class0Accuracy, metrics.class1Accuracy, metrics.totalAccuracy) == (1.0, 1.0, 1.0)


def testInvertedRanking():
	scores = _scores([1, 1, 1, 9, 8, 7, 6, 5, 4, 3], [True]*3 + [False]*7)
	classified = an.classifyTopK(scores)
	metrics = an.perClassMetrics([score.predictedSoz for score in classified], [score.trueSoz for score in classified])
	assert metrics.class1Accuracy == 0.0


def testConfusionArithmetic():
	truths = [True, True, True] + [False]*7
	predictions = [True, True, False, True] + [False]*6
	metrics = an.perClassMetrics(predictions, truths)
	assert metrics.class1Accuracy == pytest.approx(2.0/3.0)
	assert metrics.class0Accuracy == pytest.approx(6.0/7.0)
	assert metrics.totalAccuracy == pytest.approx(0.8)
	assert (metrics.class0Support, metrics.class1Support) == (7, 3)


def testInconsistentMetricsRejected():
	with pytest.raises(AnalysisError):
		an.ClassMetrics(1.0, 0.0, 0.9, 5, 5)


def testMissingClassGivesNaN():
	metrics = an.perClassMetrics([False, True], [False, False])
	assert np.isnan(metrics.class1Accuracy)
	assert metrics.class0Accuracy == 0.5


def testScoresTableColumns():
	table = an.scoresTable(an.classifyTopK(_scores([3, 2, 1], [True, False, False])))
	assert list(table.columns) == ["Rank", "Channel", "Score", "PredictedSoz", "TrueSoz"]
	assert table["PredictedSoz"].tolist() == [True, False, False]


#######################
# Window dominance
#######################
def testSozHubDominatesItsWindow():
	spatial = [_uniform(4), _star(4, 2)]
	table = an.windowDominance(spatial, [g_Pre, g_Onset], [False, False, True, False], topFraction=0.25)
	assert table["TopCount"].tolist() == [1, 1]
	assert table.loc[1, "SozRatio"] == 1.0
	assert table.loc[1, "NonSozRatio"] == 0.0
	assert table.loc[0, "SozRatio"] == 0.0


def testUniformGraphReflectsBaseRates():
	spatial = [_uniform(4)]
	group = an.windowDominance(spatial, [g_Onset], [True, False, False, False], topFraction=0.5)
	assert group.loc[0, "SozRatio"] == 1.0
	assert group.loc[0, "NonSozRatio"] == pytest.approx(1.0/3.0)
	top = an.windowDominance(spatial, [g_Onset], [True, False, False, False], topFraction=0.5, normalization="top")
	assert (top.loc[0, "SozRatio"], top.loc[0, "NonSozRatio"]) == (0.5, 0.5)


def testEmptyTopSetRejected():
	with pytest.raises(AnalysisError):
		an.windowDominance([_uniform(4)], [g_Onset], [True, False, False, False], topFraction=0.1)


#######################
# Temporal regimes
#######################
def testBlockDiagonalTemporalGraph():
	temporal = _laplacian(4, {(0, 1): 1.0, (2, 3): 1.0})
	within, across = an.regimeContrast(temporal, [g_Pre, g_Pre, g_Onset, g_Post])
	assert within == 1.0
	assert across == 0.0


def testUniformTemporalGraph():
	within, across = an.regimeContrast(_uniform(5), [g_Pre, g_Pre, g_Onset, g_Post, g_Post])
	assert within == pytest.approx(across, rel=1e-12)


def testDegenerateGrouping():
	with pytest.raises(AnalysisError):
		an.regimeContrast(_uniform(2), [g_Onset, g_Post])
	with pytest.raises(AnalysisError):
		an.regimeContrast(_uniform(3), [g_Onset, g_Post, g_Post])


def testTemporalAdjacencyTable():
	table = an.temporalAdjacencyTable(_uniform(3), [g_Pre, g_Onset, g_Post])
	assert len(table.index) == 9
	assert table.loc[(table["WindowI"] == 0) & (table["WindowJ"] == 2), "Weight"].iloc[0] == pytest.approx(0.5)
	assert table.loc[(table["WindowI"] == 1) & (table["WindowJ"] == 1), "Weight"].iloc[0] == 0.0


#######################
# Mean graphs
#######################
def testIdenticalGraphsHaveNoContrast():
	L = _star(5, 1)
	preMean, postMean, difference = an.meanGraphContrast([L, L, L, L], [g_Pre, g_Pre, g_Onset, g_Post])
	np.testing.assert_allclose(difference, 0.0, rtol=0, atol=1e-15)


def testMeanGraphsAreValid():
	rng = np.random.default_rng(83)
	spatial = []
	for m in range(5):
		weights = rng.random(6)
		spatial.append(gc.laplacianFromWeights(gc.EdgeWeightVector(4, weights*2.0/weights.sum())))
	preMean, postMean, difference = an.meanGraphContrast(spatial, [g_Pre, g_Pre, g_Onset, g_Post, g_Post])
	for L in (preMean, postMean):
		assert L.isTraceFeasible()
		assert L.minEigenvalue() > -1e-10
	np.testing.assert_allclose(postMean.matrix, 0.5*(spatial[3].matrix + spatial[4].matrix), rtol=0, atol=1e-15)

	with pytest.raises(AnalysisError):
		an.meanGraphContrast(spatial[:3], [g_Pre, g_Pre, g_Onset])


def testDifferenceEdgesSortedByMagnitude():
	preMean = _uniform(4)
	postMean = _star(4, 0)
	table = an.differenceEdgeTable(preMean, postMean, ["a", "b", "c", "d"])
	magnitudes = np.abs(table["Difference"].to_numpy())
	assert np.all(np.diff(magnitudes) <= 1e-15)
	assert list(table.columns) == ["i", "j", "node_i", "node_j", "PreWeight", "PostWeight", "Difference"]


#######################
# Statistics
#######################
def testConstantImprovementOverTenPairs():
	a = np.linspace(0.5, 0.9, 10)
	statistic, pValue = an.wilcoxonSignedRank(a + 0.05, a)
	assert statistic == 0.0
	assert pValue == pytest.approx(2.0/1024.0, rel=1e-12)


def testIdenticalSamplesGivePOne():
	a = [0.1, 0.5, 0.7, 0.2, 0.9]
	assert an.wilcoxonSignedRank(a, a) == (0.0, 1.0)


def testSwappingSamplesKeepsP():
	rng = np.random.default_rng(84)
	a = rng.random(12)
	b = rng.random(12)
	assert an.wilcoxonSignedRank(a, b)[1] == pytest.approx(an.wilcoxonSignedRank(b, a)[1], rel=1e-12)


def testExactDistributionMatchesEnumeration():
	rng = np.random.default_rng(85)
	for trial in range(20):
		n = int(rng.integers(5, 11))
		a = np.round(rng.random(n), 1)
		b = np.round(rng.random(n), 1)
		if (np.all(a == b)):
			continue
		assert an.wilcoxonSignedRank(a, b)[1] == pytest.approx(_exactWilcoxonOracle(a, b), rel=1e-12)


def testUntiedSamplesMatchEnumeration():
	rng = np.random.default_rng(86)
	for trial in range(10):
		n = int(rng.integers(5, 12))
		a = rng.random(n)
		b = rng.random(n)
		statistic, pValue = an.wilcoxonSignedRank(a, b)
		assert pValue == pytest.approx(_exactWilcoxonOracle(a, b), rel=1e-9)
		assert statistic == pytest.approx(stats.wilcoxon(a - b).statistic)


def testNormalApproximationForManyPairs():
	a = np.linspace(0.0, 1.0, 30)
	statistic, pValue = an.wilcoxonSignedRank(a + np.linspace(0.01, 0.3, 30), a)
	assert statistic == 0.0
	assert pValue < 1e-5


def testCompareMethods():
	class0 = np.linspace(0.4, 0.8, 10)
	class1 = np.linspace(0.3, 0.9, 10)
	tableA = _metricsTable(class0 + 0.1, class1)
	tableB = _metricsTable(class0, class1)
	report = an.compareMethods(tableA, tableB)
	assert report["Class"].tolist() == ["Class0", "Class1", "Total"]
	assert report.loc[0, "PValue"] == pytest.approx(2.0/1024.0)
	assert report.loc[1, "PValue"] == 1.0
	assert report.loc[0, "NPairs"] == 10


def testCompareNeedsFivePairs():
	with pytest.raises(InsufficientPairsError):
		an.compareMethods(_metricsTable([0.5]*4, [0.5]*4), _metricsTable([0.6]*4, [0.4]*4))
	#Unmatched recordings do not pair
	with pytest.raises(InsufficientPairsError):
		an.compareMethods(_metricsTable([0.5]*6, [0.5]*6, prefix="a"), _metricsTable([0.6]*6, [0.4]*6, prefix="b"))


def testHistogramCountsEveryRecording():
	table = _metricsTable(np.linspace(0.0, 1.0, 7), np.linspace(0.2, 0.6, 7))
	histogram = an.histogramTable([table], ["SpaTeoGL"], bins=5)
	for className in ("Class0", "Class1"):
		rows = histogram[histogram["Class"] == className]
		assert rows["Count"].sum() == 7
		assert rows["Fraction"].sum() == pytest.approx(1.0)


def testGatherMetricsTables(tmp_path):
	for name in ("p1", "p2"):
		utils.writeCsv(_metricsTable([0.5, 0.6], [0.7, 0.8], prefix=name), os.path.join(str(tmp_path), name, "analysis", "metrics.csv"))
	gathered = an.gatherMetricsTables(str(tmp_path))
	assert len(gathered.index) == 4
	assert sorted(gathered["Recording"]) == ["p100", "p101", "p200", "p201"]
	with pytest.raises(AnalysisError):
		an.gatherMetricsTables(str(tmp_path / "empty"))


def testMetricsRowAveragesFolds():
	folds = [an.ClassMetrics.fromCounts(2, 0, 3, 1), an.ClassMetrics.fromCounts(1, 1, 4, 0)]
	row = an.metricsRow("rec", "HVG", folds)
	assert row["Class1Accuracy"] == pytest.approx(0.75)
	assert row["Class1Std"] == pytest.approx(0.25)
	assert row["Class0Support"] == 8
	assert list(an.metricsTable([row]).columns) == an.g_MetricsColumns
