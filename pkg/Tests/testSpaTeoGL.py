'''
Joint objective, block subproblems and the block coordinate descent loop
'''
import os

import numpy as np
import pytest

import GraphClasses as gc
import QPSolver as qps
import SpaTeoGL as stgl
import Synth as syn
from PipelineErrors import ConfigError, DimensionMismatchError, DegenerateTemporalError, InvalidTemporalGraphError, InvalidProblemError, SolverBlockError


def _randomWindows(rng, nNodes, nWindows, nSamples):
	return [gc.SignalMatrix(rng.standard_normal((nNodes, nSamples))) for m in range(nWindows)]


def _randomLaplacian(rng, nNodes):
	weights = rng.random(gc.edgeCount(nNodes))
	weights *= (nNodes/2.0)/weights.sum()
	return gc.laplacianFromWeights(gc.EdgeWeightVector(nNodes, weights))


def _randomFeasible(rng, dimension, simplexSum):
	point = rng.random(dimension)
	return point*(simplexSum/point.sum())


def _denseJointObjective(windows, spatial, temporal, beta):
	total = 0.0
	for X, L in zip(windows, spatial):
		total += np.trace(X.values.T.dot(L.matrix).dot(X.values))
		total += beta*np.sum(L.matrix**2)
	Xt = np.array([L.matrix.reshape(-1, order="F") for L in spatial])
	total += np.trace(Xt.T.dot(temporal.matrix).dot(Xt))
	total += beta*np.sum(temporal.matrix**2)
	return total


def _tightConfig(**kwargs):
	settings = {"beta": 0.5, "maxOuterIter": 500, "outerRelTol": 1e-12, "kktTol": 1e-10, "maxSolverIter": 20000, "normalizeDistances": False}
	settings.update(kwargs)
	return stgl.SpaTeoGLConfig(**settings)


#######################
# Joint objective
#######################
def testSingleWindowObjectiveHasNoTemporalSmoothness():
	rng = np.random.default_rng(20)
	X = gc.SignalMatrix(rng.standard_normal((4, 10)))
	L = _randomLaplacian(rng, 4)
	expected = gc.smoothness(X, L) + 0.5*L.frobeniusSq()
	assert stgl.jointObjective([X], [L], gc.GraphLaplacian.empty(1), 0.5) == pytest.approx(expected, rel=1e-12)


def testConstantSignalsLeaveOnlyRegularization():
	nNodes, nWindows, beta = 5, 3, 0.7
	windows = [gc.SignalMatrix(np.full((nNodes, 6), 2.5)) for m in range(nWindows)]
	spatial = [gc.laplacianFromWeights(gc.EdgeWeightVector.uniform(nNodes)) for m in range(nWindows)]
	temporal = gc.laplacianFromWeights(gc.EdgeWeightVector.uniform(nWindows))
	expected = beta*(sum(L.frobeniusSq() for L in spatial) + temporal.frobeniusSq())
	assert stgl.jointObjective(windows, spatial, temporal, beta) == pytest.approx(expected, rel=1e-10)


def testObjectiveMatchesDenseEvaluation():
	rng = np.random.default_rng(21)
	for trial in range(10):
		windows = _randomWindows(rng, 4, 3, 7)
		spatial = [_randomLaplacian(rng, 4) for m in range(3)]
		temporal = _randomLaplacian(rng, 3)
		expected = _denseJointObjective(windows, spatial, temporal, 0.3)
		assert stgl.jointObjective(windows, spatial, temporal, 0.3) == pytest.approx(expected, rel=1e-10)


def testObjectiveDimensionMismatch():
	rng = np.random.default_rng(22)
	windows = _randomWindows(rng, 4, 3, 7)
	spatial = [_randomLaplacian(rng, 4) for m in range(3)]
	with pytest.raises(DimensionMismatchError):
		stgl.jointObjective(windows, spatial, _randomLaplacian(rng, 2), 0.5)
	with pytest.raises(DimensionMismatchError):
		stgl.jointObjective(windows, spatial[:2], _randomLaplacian(rng, 3), 0.5)


#######################
# Spatial subproblem
#######################
def testDecoupledSpatialBlockIsSmoothGraphLearning():
	rng = np.random.default_rng(23)
	X = gc.SignalMatrix(rng.standard_normal((5, 9)))
	others = [gc.GraphLaplacian.empty(5), _randomLaplacian(rng, 5), _randomLaplacian(rng, 5)]
	qp = stgl.assembleSpatialSubproblem(0, X, others, [0.0, 0.0, 0.0], 0.4)

	np.testing.assert_allclose(qp.linearTerm, gc.pairwiseDistances(X), rtol=1e-14, atol=0)
	S = gc.degreeOperator(5)
	np.testing.assert_allclose(qp.denseQuadratic(), 0.4*(2.0*np.eye(10) + S.T.dot(S)), rtol=1e-14, atol=1e-14)
	assert qp.constant == 0.0
	assert qp.strongConvexity >= 2.0*0.4
	assert qp.name == "spatial_0001"


def testSpatialBlockObjectiveMatchesDenseEvaluation():
	rng = np.random.default_rng(24)
	nNodes, nWindows, beta = 4, 4, 0.6
	windows = _randomWindows(rng, nNodes, nWindows, 8)
	spatial = [_randomLaplacian(rng, nNodes) for m in range(nWindows)]
	temporal = _randomLaplacian(rng, nWindows)
	A = temporal.adjacency()

	for m in range(nWindows):
		qp = stgl.assembleSpatialSubproblem(m, windows[m], spatial, A[m, :], beta)
		for trial in range(10):
			w = _randomFeasible(rng, gc.edgeCount(nNodes), nNodes/2.0)
			L = gc.laplacianFromWeights(gc.EdgeWeightVector(nNodes, w))
			expected = gc.smoothness(windows[m], L) + beta*np.sum(L.matrix**2)
			for j in range(nWindows):
				if (j != m):
					expected += A[m, j]*np.sum((L.matrix - spatial[j].matrix)**2)
			assert qp.objective(w) == pytest.approx(expected, rel=1e-10)


def testSpatialBlockAgreesWithJointObjectiveDifferences():
	rng = np.random.default_rng(25)
	nNodes, nWindows, beta = 4, 3, 0.5
	windows = _randomWindows(rng, nNodes, nWindows, 8)
	spatial = [_randomLaplacian(rng, nNodes) for m in range(nWindows)]
	temporal = _randomLaplacian(rng, nWindows)
	qp = stgl.assembleSpatialSubproblem(1, windows[1], spatial, temporal.adjacency()[1, :], beta)

	first = _randomFeasible(rng, gc.edgeCount(nNodes), 2.0)
	second = _randomFeasible(rng, gc.edgeCount(nNodes), 2.0)
	jointValues = []
	for w in (first, second):
		candidate = list(spatial)
		candidate[1] = gc.laplacianFromWeights(gc.EdgeWeightVector(nNodes, w))
		jointValues.append(stgl.jointObjective(windows, candidate, temporal, beta))
	assert qp.objective(first) - qp.objective(second) == pytest.approx(jointValues[0] - jointValues[1], rel=1e-8, abs=1e-10)


def testCouplingPullsTowardNeighbour():
	rng = np.random.default_rng(26)
	target = _randomLaplacian(rng, 4)
	X = gc.SignalMatrix(np.ones((4, 5)))
	qp = stgl.assembleSpatialSubproblem(0, X, [gc.GraphLaplacian.empty(4), target], [0.0, 1.0], 1e-6)
	report = qps.solveSimplexQP(qp, kktTol=1e-11, maxIter=20000)
	np.testing.assert_allclose(report.solution, gc.weightsFromLaplacian(target).weights, rtol=0, atol=1e-4)


def testNegativeTemporalWeightRejected():
	rng = np.random.default_rng(27)
	X = gc.SignalMatrix(rng.standard_normal((3, 4)))
	spatial = [_randomLaplacian(rng, 3), _randomLaplacian(rng, 3)]
	with pytest.raises(InvalidTemporalGraphError):
		stgl.assembleSpatialSubproblem(0, X, spatial, [0.0, -0.01], 0.5)
	#Rounding-level negatives are treated as zero
	stgl.assembleSpatialSubproblem(0, X, spatial, [0.0, -1e-14], 0.5)


#######################
# Temporal subproblem
#######################
def testIdenticalPairGivesTheOnlyFeasibleWeight():
	rng = np.random.default_rng(28)
	L = _randomLaplacian(rng, 4)
	qp = stgl.assembleTemporalSubproblem([L, L], 0.5)
	np.testing.assert_array_equal(qp.linearTerm, [0.0])
	report = qps.solveSimplexQP(qp)
	np.testing.assert_allclose(report.solution, [1.0], rtol=0, atol=1e-12)


def testSimilarWindowsAreLinkedMoreStrongly():
	rng = np.random.default_rng(29)
	shared = _randomLaplacian(rng, 4)
	other = _randomLaplacian(rng, 4)
	qp = stgl.assembleTemporalSubproblem([shared, shared, other], 0.5)
	report = qps.solveSimplexQP(qp, kktTol=1e-10)
	w12, w13, w23 = report.solution
	assert w12 > w13
	assert w12 > w23

	point, value = qps.bruteForceSimplexQP(qp, 1.5, 0.01)
	assert point[0] >= point[1]
	assert point[0] >= point[2]
	assert report.objective <= value + 1e-12


def testTemporalObjectiveMatchesDenseEvaluation():
	rng = np.random.default_rng(30)
	spatial = [_randomLaplacian(rng, 3) for m in range(4)]
	qp = stgl.assembleTemporalSubproblem(spatial, 0.8)
	Xt = np.array([gc.vecLaplacian(L) for L in spatial])
	for trial in range(10):
		w = _randomFeasible(rng, 6, 2.0)
		Lt = gc.laplacianFromWeights(gc.EdgeWeightVector(4, w))
		expected = np.trace(Xt.T.dot(Lt.matrix).dot(Xt)) + 0.8*np.sum(Lt.matrix**2)
		assert qp.objective(w) == pytest.approx(expected, rel=1e-10)


def testTemporalNeedsTwoWindows():
	with pytest.raises(DegenerateTemporalError):
		stgl.assembleTemporalSubproblem([gc.laplacianFromWeights(gc.EdgeWeightVector.uniform(3))], 0.5)


#######################
# Config
#######################
def testBetaMustBePositive():
	with pytest.raises(ConfigError):
		stgl.SpaTeoGLConfig(beta=0.0)
	with pytest.raises(ConfigError):
		stgl.SpaTeoGLConfig.fromSettings({"Beta": -1.0})


def testConfigFromSettings():
	config = stgl.SpaTeoGLConfig.fromSettings({"Beta": 0.25, "SweepMode": "jacobi", "MaxOuterIter": 7})
	assert config.beta == 0.25
	assert config.sweepMode == stgl.SWEEP_MODE.JACOBI
	assert config.maxOuterIter == 7
	assert config.outerRelTol == 1e-6
	with pytest.raises(ConfigError):
		stgl.SpaTeoGLConfig.fromSettings({"SweepMode": "random"})


#######################
# Block coordinate descent
#######################
def testSingleWindowMatchesSmoothGraphLearning():
	rng = np.random.default_rng(31)
	X = gc.SignalMatrix(rng.standard_normal((6, 20)))
	result = stgl.runSpaTeoGL([X], stgl.SpaTeoGLConfig(beta=0.5, normalizeDistances=False))
	L, report = stgl.learnSmoothGraph(X, 0.5)

	assert result.temporalLaplacian.nNodes == 1
	np.testing.assert_array_equal(result.temporalLaplacian.matrix, [[0.0]])
	np.testing.assert_allclose(result.spatialLaplacians[0].matrix, L.matrix, rtol=0, atol=1e-9)
	assert result.converged


def testObjectiveTraceIsNonIncreasing():
	rng = np.random.default_rng(32)
	for trial in range(20):
		nNodes = int(rng.integers(3, 7))
		nWindows = int(rng.integers(2, 6))
		windows = _randomWindows(rng, nNodes, nWindows, 16)
		result = stgl.runSpaTeoGL(windows, stgl.SpaTeoGLConfig(beta=float(rng.uniform(0.1, 2.0)), maxOuterIter=30))
		trace = [result.initialObjective] + result.objectiveTrace
		for k in range(len(trace) - 1):
			assert trace[k + 1] <= trace[k] + 1e-8


def testEveryBlockSolveReachesDefaultTolerance():
	spec = syn.SynthSpec(nNodes=10, mWindows=13, samplesPerWindow=128, nPre=3, plantedCommunity=[0, 1, 2], boostFactor=3.0, noiseStd=0.1, seed=100, name="planted")
	result = stgl.runSpaTeoGL(syn.generate(spec).windowedRecording.windows)
	assert len(result.solverLog) > 0
	for entry in result.solverLog:
		assert entry["Converged"], "{} stopped at kkt residual {:.3g}".format(entry["Block"], entry["KktResidual"])
		assert entry["KktResidual"] <= qps.g_KktTol


def testReturnedGraphsAreValidLaplacians():
	rng = np.random.default_rng(33)
	windows = _randomWindows(rng, 6, 5, 32)
	result = stgl.runSpaTeoGL(windows)
	assert result.nWindows == 5
	assert result.nNodes == 6
	for L in result.spatialLaplacians + [result.temporalLaplacian]:
		violations = L.constraintViolations()
		assert violations["RowSum"] < 1e-9
		assert violations["Trace"] < 1e-9
		assert violations["OffDiagonal"] <= 1e-9
		assert violations["MinEigenvalue"] > -1e-8


def testObjectiveTraceReconcilesWithReturnedGraphs():
	rng = np.random.default_rng(34)
	windows = _randomWindows(rng, 5, 4, 24)
	result = stgl.runSpaTeoGL(windows)
	normalized, scales = stgl.normalizeWindows(windows)
	recomputed = stgl.jointObjective(normalized, result.spatialLaplacians, result.temporalLaplacian, result.config.beta)
	assert recomputed == pytest.approx(result.finalObjective(), rel=1e-9)
	assert result.windowScales == pytest.approx(scales)


def testNormalizedWindowsHaveUnitMeanDistance():
	rng = np.random.default_rng(35)
	windows = [gc.SignalMatrix(10.0*rng.standard_normal((5, 12))) for m in range(3)]
	normalized, scales = stgl.normalizeWindows(windows)
	for X in normalized:
		assert np.mean(gc.pairwiseDistances(X)) == pytest.approx(1.0, rel=1e-12)
	constant, constantScales = stgl.normalizeWindows([gc.SignalMatrix(np.ones((3, 4)))])
	assert constantScales == [1.0]


def testEveryBlockIsOptimalAtConvergence():
	rng = np.random.default_rng(36)
	nNodes, nWindows, beta = 4, 3, 0.5
	windows = _randomWindows(rng, nNodes, nWindows, 12)
	result = stgl.runSpaTeoGL(windows, _tightConfig(beta=beta))
	assert result.converged
	final = stgl.jointObjective(windows, result.spatialLaplacians, result.temporalLaplacian, beta)

	adjacency = result.temporalLaplacian.adjacency()
	for m in range(nWindows):
		qp = stgl.assembleSpatialSubproblem(m, windows[m], result.spatialLaplacians, adjacency[m, :], beta)
		report = qps.solveSimplexQP(qp, w0=gc.weightsFromLaplacian(result.spatialLaplacians[m]).weights, kktTol=1e-10, maxIter=20000)
		candidate = list(result.spatialLaplacians)
		candidate[m] = gc.laplacianFromWeights(gc.EdgeWeightVector(nNodes, report.solution))
		assert abs(stgl.jointObjective(windows, candidate, result.temporalLaplacian, beta) - final) < 1e-6

	qp = stgl.assembleTemporalSubproblem(result.spatialLaplacians, beta)
	report = qps.solveSimplexQP(qp, w0=result.temporalWeights().weights, kktTol=1e-10, maxIter=20000)
	temporal = gc.laplacianFromWeights(gc.EdgeWeightVector(nWindows, report.solution))
	assert abs(stgl.jointObjective(windows, result.spatialLaplacians, temporal, beta) - final) < 1e-6


def testRelabelingElectrodesPermutesGraphs():
	rng = np.random.default_rng(37)
	windows = _randomWindows(rng, 5, 3, 16)
	permutation = np.array([3, 0, 4, 1, 2])
	config = stgl.SpaTeoGLConfig(beta=0.5, outerRelTol=1e-12, kktTol=1e-10, maxOuterIter=500, maxSolverIter=20000)

	original = stgl.runSpaTeoGL(windows, config)
	permuted = stgl.runSpaTeoGL([X.permuted(permutation) for X in windows], config)
	for L, Lp in zip(original.spatialLaplacians, permuted.spatialLaplacians):
		np.testing.assert_allclose(Lp.matrix, L.matrix[np.ix_(permutation, permutation)], rtol=0, atol=1e-6)
	np.testing.assert_allclose(permuted.temporalLaplacian.matrix, original.temporalLaplacian.matrix, rtol=0, atol=1e-6)


def _jointProjectedGradient(distances, beta, nNodes, iterations=5000):
	'''
	Joint minimizer for M=2 by plain projected gradient on both spatial blocks at once.
	With two windows the temporal weight is forced to 1, so the problem is one convex QP over two simplices.
	'''
	S = gc.degreeOperator(nNodes)
	P = 2.0*np.eye(gc.edgeCount(nNodes)) + S.T.dot(S)
	hessian = 2.0*np.block([[(beta + 1.0)*P, -P], [-P, (beta + 1.0)*P]])
	step = 1.0/np.linalg.eigvalsh(hessian)[-1]
	linear = np.concatenate(distances)
	dimension = gc.edgeCount(nNodes)
	w = np.full(2*dimension, 1.0/(nNodes - 1))
	for iteration in range(iterations):
		z = w - step*(linear + hessian.dot(w))
		w = np.concatenate([qps.projectScaledSimplex(z[:dimension], nNodes/2.0), qps.projectScaledSimplex(z[dimension:], nNodes/2.0)])
	return float(linear.dot(w) + 0.5*w.dot(hessian.dot(w)) + beta*4.0)


def testJointSolutionMatchesBruteForce():
	nNodes, beta = 3, 0.5
	S = gc.degreeOperator(nNodes)
	P = 2.0*np.eye(3) + S.T.dot(S)
	#Exhaustive grid over both weight simplices, step 0.05
	grid = qps._simplexGrid(3, 30)*(1.5/30)
	quadratic = np.einsum("pi,ij,pj->p", grid, P, grid)
	cross = grid.dot(P).dot(grid.T)

	for seed in range(38, 43):
		rng = np.random.default_rng(seed)
		windows = _randomWindows(rng, nNodes, 2, 8)
		result = stgl.runSpaTeoGL(windows, _tightConfig(beta=beta))
		distances = [gc.pairwiseDistances(X) for X in windows]

		own = grid.dot(distances[0])[:, None] + grid.dot(distances[1])[None, :]
		values = own + (beta + 1.0)*(quadratic[:, None] + quadratic[None, :]) - 2.0*cross + beta*4.0
		gridBest = float(values.min())

		exact = _jointProjectedGradient(distances, beta, nNodes)
		assert result.finalObjective() <= gridBest + 1e-9, "seed {}".format(seed)
		assert result.finalObjective() == pytest.approx(exact, abs=1e-6), "seed {}".format(seed)
		assert gridBest - result.finalObjective() < 0.5, "seed {}".format(seed)


def testJacobiModeIsDeterministicAcrossThreads():
	rng = np.random.default_rng(39)
	windows = _randomWindows(rng, 5, 4, 16)
	single = stgl.runSpaTeoGL(windows, stgl.SpaTeoGLConfig(sweepMode="jacobi", maxOuterIter=10, threads=1))
	pooled = stgl.runSpaTeoGL(windows, stgl.SpaTeoGLConfig(sweepMode="jacobi", maxOuterIter=10, threads=3))
	for L, Lp in zip(single.spatialLaplacians, pooled.spatialLaplacians):
		np.testing.assert_array_equal(L.matrix, Lp.matrix)
	assert single.objectiveTrace == pooled.objectiveTrace


def testMismatchedWindowsRejected():
	rng = np.random.default_rng(40)
	with pytest.raises(DimensionMismatchError):
		stgl.runSpaTeoGL([gc.SignalMatrix(rng.standard_normal((4, 5))), gc.SignalMatrix(rng.standard_normal((3, 5)))])
	with pytest.raises(DimensionMismatchError):
		stgl.runSpaTeoGL([gc.SignalMatrix(rng.standard_normal((1, 5)))])
	with pytest.raises(DimensionMismatchError):
		stgl.runSpaTeoGL([])


def testBlockFailureNamesTheBlock(monkeypatch):
	def failingSolver(qp, **kwargs):
		raise InvalidProblemError("forced failure")
	monkeypatch.setattr(stgl, "solveSimplexQP", failingSolver)

	rng = np.random.default_rng(41)
	with pytest.raises(SolverBlockError) as errorInfo:
		stgl.runSpaTeoGL(_randomWindows(rng, 3, 2, 4))
	assert errorInfo.value.blockName == "spatial_0001"
	assert errorInfo.value.exitCode == 30


#######################
# Result directory
#######################
def testResultDirectoryRoundTrip(tmp_path):
	rng = np.random.default_rng(42)
	windows = _randomWindows(rng, 4, 3, 10)
	result = stgl.runSpaTeoGL(windows, stgl.SpaTeoGLConfig(maxOuterIter=5))
	outputDir = str(tmp_path / "learn")
	stgl.writeResult(result, outputDir, nodeIds=["A", "B", "C", "D"], windowLabels=["PreOnset", "Onset", "PostOnset"])

	for fileName in ["spatial_0001.csv", "spatial_0003_edges.csv", "temporal.csv", "objective_trace.csv", "solver_log.csv", "window_scales.csv", "window_labels.csv", "config.json"]:
		assert os.path.exists(os.path.join(outputDir, fileName))

	loaded, nodeIds = stgl.readResult(outputDir)
	assert nodeIds == ["A", "B", "C", "D"]
	assert loaded.objectiveTrace == result.objectiveTrace
	assert loaded.config.beta == result.config.beta
	for L, Lr in zip(result.spatialLaplacians, loaded.spatialLaplacians):
		np.testing.assert_array_equal(L.matrix, Lr.matrix)
	np.testing.assert_array_equal(loaded.temporalLaplacian.matrix, result.temporalLaplacian.matrix)
