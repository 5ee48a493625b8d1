'''
Graph types, weight/Laplacian conversions, smoothness and the CSV formats
'''
import numpy as np
import pytest

import GraphClasses as gc
from PipelineErrors import InvalidWeightsError, InvalidLaplacianError, DimensionMismatchError


def _randomWeights(rng, nNodes, feasible=True):
	weights = rng.random(gc.edgeCount(nNodes))
	if (feasible):
		weights *= (nNodes/2.0)/weights.sum()
	return gc.EdgeWeightVector(nNodes, weights)


#######################
# laplacianFromWeights
#######################
def testSingleEdgeLaplacian():
	L = gc.laplacianFromWeights(gc.EdgeWeightVector(2, [1.0]))
	np.testing.assert_array_equal(L.matrix, [[1.0, -1.0], [-1.0, 1.0]])
	assert L.isTraceFeasible()


def testEmptyGraphIsValidButNotTraceFeasible():
	w = gc.EdgeWeightVector(3, [0.0, 0.0, 0.0])
	L = gc.laplacianFromWeights(w)
	np.testing.assert_array_equal(L.matrix, np.zeros((3, 3)))
	assert not L.isTraceFeasible()
	assert not w.isTraceFeasible()


def testThreeNodeLaplacianByHand():
	L = gc.laplacianFromWeights(gc.EdgeWeightVector(3, [0.9, 0.3, 0.3]))
	np.testing.assert_allclose(np.diag(L.matrix), [1.2, 1.2, 0.6], rtol=0, atol=1e-14)
	assert L.matrix[0, 1] == -0.9
	assert L.matrix[0, 2] == -0.3
	assert L.matrix[1, 2] == -0.3
	assert abs(L.trace() - 3.0) < 1e-12


def testNegativeWeightRejected():
	with pytest.raises(InvalidWeightsError):
		gc.EdgeWeightVector(3, [0.5, -0.1, 1.1])


def testWrongWeightCountRejected():
	with pytest.raises(InvalidWeightsError):
		gc.EdgeWeightVector(4, [1.0, 1.0])


def testUniformWeightsAreTraceFeasible():
	for nNodes in range(2, 9):
		w = gc.EdgeWeightVector.uniform(nNodes)
		assert w.isTraceFeasible()
		assert gc.laplacianFromWeights(w).isTraceFeasible()


def testTraceFeasibleExactlyWhenWeightsSumToHalfN():
	assert gc.EdgeWeightVector(4, [0.5, 0.5, 0.25, 0.25, 0.25, 0.25]).isTraceFeasible()
	assert not gc.EdgeWeightVector(4, [0.5, 0.5, 0.25, 0.25, 0.25, 0.5]).isTraceFeasible()


def testConstructedLaplaciansSatisfyInvariants():
	rng = np.random.default_rng(1)
	for trial in range(50):
		nNodes = int(rng.integers(2, 9))
		L = gc.laplacianFromWeights(_randomWeights(rng, nNodes))
		violations = L.constraintViolations()
		assert violations["RowSum"] < 1e-12
		assert violations["Trace"] < 1e-9
		assert violations["OffDiagonal"] <= 0.0
		assert violations["Symmetry"] == 0.0
		assert violations["MinEigenvalue"] > -1e-10


#######################
# weightsFromLaplacian
#######################
def testInverseOfSingleEdge():
	w = gc.weightsFromLaplacian(gc.GraphLaplacian([[1.0, -1.0], [-1.0, 1.0]]))
	np.testing.assert_array_equal(w.weights, [1.0])


def testInverseOfZeroMatrix():
	w = gc.weightsFromLaplacian(gc.GraphLaplacian(np.zeros((3, 3))))
	np.testing.assert_array_equal(w.weights, [0.0, 0.0, 0.0])


def testWeightLaplacianRoundTrip():
	rng = np.random.default_rng(2)
	for trial in range(20):
		L = gc.laplacianFromWeights(_randomWeights(rng, 5))
		back = gc.laplacianFromWeights(gc.weightsFromLaplacian(L))
		assert np.max(np.abs(back.matrix - L.matrix)) < 1e-12


def testAsymmetricLaplacianRejected():
	with pytest.raises(InvalidLaplacianError):
		gc.weightsFromLaplacian(np.array([[1.0, -1.0], [-0.5, 0.5]]))


def testPositiveOffDiagonalRejected():
	with pytest.raises(InvalidLaplacianError):
		gc.GraphLaplacian([[-1.0, 1.0], [1.0, -1.0]])


def testNonzeroRowSumRejected():
	with pytest.raises(InvalidLaplacianError):
		gc.GraphLaplacian([[2.0, -1.0], [-1.0, 2.0]])


#######################
# Smoothness
#######################
def testConstantSignalIsPerfectlySmooth():
	rng = np.random.default_rng(3)
	L = gc.laplacianFromWeights(_randomWeights(rng, 6))
	X = gc.SignalMatrix(np.ones((6, 4)))
	assert gc.smoothness(X, L) < 1e-12


def testSingleEdgeSmoothness():
	L = gc.laplacianFromWeights(gc.EdgeWeightVector(2, [1.0]))
	X = gc.SignalMatrix([[1.0], [0.0]])
	assert gc.smoothness(X, L) == pytest.approx(1.0, abs=1e-15)


def testSmoothnessMatchesDenseTrace():
	L = gc.laplacianFromWeights(gc.EdgeWeightVector(3, [0.9, 0.3, 0.3]))
	X = gc.SignalMatrix(np.eye(3))
	dense = np.trace(X.values.T.dot(L.matrix).dot(X.values))
	assert gc.smoothness(X, L) == pytest.approx(dense, rel=1e-12)


def testSmoothnessDimensionMismatch():
	L = gc.laplacianFromWeights(gc.EdgeWeightVector.uniform(3))
	with pytest.raises(DimensionMismatchError):
		gc.smoothness(gc.SignalMatrix(np.ones((4, 2))), L)


def testSmoothnessNonnegativeOnRandomDraws():
	rng = np.random.default_rng(4)
	for trial in range(1000):
		nNodes = int(rng.integers(2, 7))
		L = gc.laplacianFromWeights(_randomWeights(rng, nNodes, feasible=False))
		X = gc.SignalMatrix(rng.standard_normal((nNodes, int(rng.integers(1, 5)))))
		assert gc.smoothness(X, L) >= 0.0


def testSmoothnessIsLinearInWeights():
	rng = np.random.default_rng(5)
	for trial in range(20):
		nNodes = int(rng.integers(2, 8))
		w = _randomWeights(rng, nNodes)
		X = gc.SignalMatrix(rng.standard_normal((nNodes, 6)))
		L = gc.laplacianFromWeights(w)
		dense = np.trace(X.values.T.dot(L.matrix).dot(X.values))

		#Edge-sum form, each unordered pair once
		edgeSum = 0.0
		for e, (i, j) in enumerate(zip(*gc.edgeIndex(nNodes))):
			edgeSum += w.weights[e]*np.sum((X.values[i] - X.values[j])**2)

		assert np.dot(gc.pairwiseDistances(X), w.weights) == pytest.approx(dense, rel=1e-10)
		assert edgeSum == pytest.approx(dense, rel=1e-10)
		assert gc.smoothness(X, L) == pytest.approx(dense, rel=1e-10)


def testFrobeniusIdentity():
	rng = np.random.default_rng(6)
	for trial in range(20):
		nNodes = int(rng.integers(2, 9))
		w = _randomWeights(rng, nNodes)
		L = gc.laplacianFromWeights(w)
		dense = np.sum(L.matrix**2)
		assert w.frobeniusSq() == pytest.approx(dense, rel=1e-10)
		assert np.dot(w.weights, gc.applyFrobeniusOperator(nNodes, w.weights)) == pytest.approx(dense, rel=1e-10)


#######################
# Vectorization
#######################
def testVecIsColumnStacking():
	L = gc.GraphLaplacian([[1.0, -1.0], [-1.0, 1.0]])
	np.testing.assert_array_equal(gc.vecLaplacian(L), [1.0, -1.0, -1.0, 1.0])


def testVecIsAnIsometry():
	rng = np.random.default_rng(7)
	first = gc.laplacianFromWeights(_randomWeights(rng, 3))
	second = gc.laplacianFromWeights(_randomWeights(rng, 3))
	assert np.sum(gc.vecLaplacian(first)**2) == pytest.approx(first.frobeniusSq(), rel=1e-12)
	vecDistance = np.sum((gc.vecLaplacian(first) - gc.vecLaplacian(second))**2)
	assert vecDistance == pytest.approx(np.sum((first.matrix - second.matrix)**2), rel=1e-12)


def testLaplacianMeanIsValid():
	rng = np.random.default_rng(8)
	laplacians = [gc.laplacianFromWeights(_randomWeights(rng, 4)) for i in range(5)]
	mean = gc.laplacianMean(laplacians)
	assert mean.isTraceFeasible()
	with pytest.raises(DimensionMismatchError):
		gc.laplacianMean([laplacians[0], gc.laplacianFromWeights(gc.EdgeWeightVector.uniform(3))])


#######################
# Edge indexing and CSV
#######################
def testCanonicalEdgeOrder():
	rows, cols = gc.edgeIndex(4)
	assert list(zip(rows.tolist(), cols.tolist())) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
	assert gc.nodeCountFromEdges(6) == 4
	with pytest.raises(InvalidWeightsError):
		gc.nodeCountFromEdges(5)


def testDenseCsvKeepsAllDigits(tmp_path):
	rng = np.random.default_rng(9)
	L = gc.laplacianFromWeights(_randomWeights(rng, 5))
	filePath = str(tmp_path / "L.csv")
	gc.writeLaplacianCsv(L, filePath, ["Fp1", "Fp2", "F3", "F4", "C3"])

	loaded, nodeIds = gc.readLaplacianCsv(filePath)
	assert nodeIds == ["Fp1", "Fp2", "F3", "F4", "C3"]
	np.testing.assert_array_equal(loaded.matrix, L.matrix)


def testEdgeListCsv(tmp_path):
	rng = np.random.default_rng(10)
	w = _randomWeights(rng, 4)
	filePath = str(tmp_path / "edges.csv")
	gc.writeEdgeListCsv(w, filePath, ["a", "b", "c", "d"])

	with open(filePath) as f:
		header = f.readline().strip()
	assert header == "i,j,node_i,node_j,weight"
	np.testing.assert_array_equal(gc.readEdgeListCsv(filePath).weights, w.weights)


def testMissingCsvIsAnInputOutputError(tmp_path):
	from PipelineErrors import InputOutputError
	with pytest.raises(InputOutputError):
		gc.readLaplacianCsv(str(tmp_path / "missing.csv"))
