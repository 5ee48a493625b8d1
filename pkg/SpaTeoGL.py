'''
Spatiotemporal graph learning by block coordinate descent.

Given windows X_1..X_M (N electrodes each), learns one spatial Laplacian per window and one temporal Laplacian
over the M windows by minimizing

	sum_m tr(X_m^T Ls_m X_m) + beta sum_m ||Ls_m||_F^2 + tr(Xt^T Lt Xt) + beta ||Lt||_F^2

where row m of Xt is vec(Ls_m)^T. A full outer iteration is one Gauss-Seidel sweep over the spatial blocks
(m = 1..M, each block sees the latest values of the others) followed by one temporal update.

Every block is a strictly convex QP over a scaled simplex once L is written as L(w):
	tr(X^T L(w) X)  = d^T w                      (d = squared row distances)
	||L(w)||_F^2    = w^T P w, P = 2I + S^T S     (S = edge-to-degree operator)
'''
import os
from concurrent.futures import ThreadPoolExecutor
from enum import Enum, unique
from functools import lru_cache

import numpy as np
import pandas as pd
from tqdm import tqdm

from PipelineErrors import PipelineError, ConfigError, DimensionMismatchError, DegenerateTemporalError, InvalidTemporalGraphError, SolverBlockError
from GraphClasses import EdgeWeightVector, GraphLaplacian, edgeCount, edgeIndex, applyFrobeniusOperator, laplacianFromWeights, weightsFromLaplacian, pairwiseDistances, vecLaplacian, smoothness, writeLaplacianCsv, readLaplacianCsv, writeEdgeListCsv
from QPSolver import SimplexQP, solveSimplexQP, powerIteration, g_KktTol, g_MaxIter
from SignalIO import writeWindowLabels
import utils


g_Logger = utils.getLogger("SpaTeoGL")

g_MonotoneSlack = 1e-8


@unique
class SWEEP_MODE(Enum):
	GAUSS_SEIDEL = "gauss-seidel"
	JACOBI = "jacobi"


class SpaTeoGLConfig:
	'''
	Parameters of one SpaTeoGL run
	'''
	def __init__(self, beta=0.5, maxOuterIter=100, outerRelTol=1e-6, kktTol=g_KktTol, maxSolverIter=g_MaxIter, sweepMode=SWEEP_MODE.GAUSS_SEIDEL, normalizeDistances=True, threads=1, showProgress=False):
		self.beta = float(beta)
		self.maxOuterIter = int(maxOuterIter)
		self.outerRelTol = float(outerRelTol)
		self.kktTol = float(kktTol)
		self.maxSolverIter = int(maxSolverIter)
		self.sweepMode = SWEEP_MODE(sweepMode)
		self.normalizeDistances = bool(normalizeDistances)
		self.threads = max(1, int(threads))
		self.showProgress = bool(showProgress)

		if (self.beta <= 0):
			raise ConfigError("beta must be > 0, got {}".format(beta))
		if (self.maxOuterIter < 1):
			raise ConfigError("MaxOuterIter must be >= 1")
		if (self.outerRelTol <= 0):
			raise ConfigError("OuterRelTol must be > 0")
		if ((self.kktTol <= 0) or (self.maxSolverIter < 1)):
			raise ConfigError("Solver settings must be positive")

	@classmethod
	def fromSettings(cls, settings, threads=1, showProgress=False):
		'''
		Builds a config from the "SpaTeoGL" section of a pipeline settings file
		'''
		try:
			return cls(
				beta=utils.getSetting(settings, "Beta", 0.5),
				maxOuterIter=utils.getSetting(settings, "MaxOuterIter", 100),
				outerRelTol=utils.getSetting(settings, "OuterRelTol", 1e-6),
				kktTol=utils.getSetting(settings, "KktTol", g_KktTol),
				maxSolverIter=utils.getSetting(settings, "MaxSolverIter", g_MaxIter),
				sweepMode=utils.getSetting(settings, "SweepMode", SWEEP_MODE.GAUSS_SEIDEL.value),
				normalizeDistances=utils.getSetting(settings, "NormalizeDistances", True),
				threads=threads,
				showProgress=showProgress)
		except (TypeError, ValueError) as e:
			if (isinstance(e, PipelineError)):
				raise
			raise ConfigError("Invalid SpaTeoGL settings {}: {}".format(settings, e))

	def toDict(self):
		return {
			"Beta": self.beta,
			"MaxOuterIter": self.maxOuterIter,
			"OuterRelTol": self.outerRelTol,
			"KktTol": self.kktTol,
			"MaxSolverIter": self.maxSolverIter,
			"SweepMode": self.sweepMode.value,
			"NormalizeDistances": self.normalizeDistances
		}

	def __str__(self):
		return "SpaTeoGLConfig({})".format(self.toDict())


class SpaTeoGLResult:
	'''
	M spatial Laplacians, one temporal Laplacian over M nodes, and the objective after each outer iteration
	'''
	def __init__(self, spatialLaplacians, temporalLaplacian, objectiveTrace, converged, initialObjective=None, solverLog=None, windowScales=None, config=None):
		self.spatialLaplacians = list(spatialLaplacians)
		self.temporalLaplacian = temporalLaplacian
		self.objectiveTrace = [float(value) for value in objectiveTrace]
		self.converged = bool(converged)
		self.initialObjective = initialObjective
		self.solverLog = solverLog if (solverLog is not None) else []
		self.windowScales = list(windowScales) if (windowScales is not None) else [1.0]*len(self.spatialLaplacians)
		self.config = config

	@property
	def nWindows(self):
		return len(self.spatialLaplacians)

	@property
	def nNodes(self):
		return self.spatialLaplacians[0].nNodes

	def spatialWeights(self):
		return [weightsFromLaplacian(L) for L in self.spatialLaplacians]

	def temporalWeights(self):
		return weightsFromLaplacian(self.temporalLaplacian)

	def finalObjective(self):
		if (len(self.objectiveTrace) == 0):
			return self.initialObjective
		return self.objectiveTrace[-1]

	def __str__(self):
		return "SpaTeoGLResult(M={}, N={}, iterations={}, objective={}, converged={})".format(self.nWindows, self.nNodes, len(self.objectiveTrace), self.finalObjective(), self.converged)


#######################
# Objective and subproblems
#######################
def temporalDistances(spatial):
	'''
	||vec(Ls_i) - vec(Ls_j)||^2 for every window pair i<j, canonical order
	'''
	rows, cols = edgeIndex(len(spatial))
	stacked = np.array([vecLaplacian(L) for L in spatial])
	differences = stacked[rows, :] - stacked[cols, :]
	return np.einsum("ek,ek->e", differences, differences)


def jointObjective(windows, spatial, temporal, beta):
	'''
	Full joint objective, evaluated densely from the matrices
	'''
	nWindows = len(windows)
	if ((len(spatial) != nWindows) or (temporal.nNodes != nWindows)):
		raise DimensionMismatchError("{} windows, {} spatial Laplacians, temporal graph over {} nodes".format(nWindows, len(spatial), temporal.nNodes))
	if (beta <= 0):
		raise ConfigError("beta must be > 0")

	total = 0.0
	for X, L in zip(windows, spatial):
		total += smoothness(X, L) + beta*L.frobeniusSq()

	if (nWindows >= 2):
		Xt = np.array([vecLaplacian(L) for L in spatial])
		total += max(0.0, float(np.sum(Xt*temporal.matrix.dot(Xt))))
	total += beta*temporal.frobeniusSq()
	return float(total)


@lru_cache(maxsize=64)
def frobeniusCurvature(nNodes):
	'''
	Largest eigenvalue of P = 2I + S^T S for an nNodes graph
	'''
	return powerIteration(lambda v: applyFrobeniusOperator(nNodes, v), edgeCount(nNodes), tol=1e-10)


def assembleSpatialSubproblem(m, Xm, otherSpatial, temporalWeightsRow, beta, distances=None):
	'''
	QP for spatial block m with everything else fixed.
	otherSpatial is the list of all M spatial Laplacians (entry m is ignored), temporalWeightsRow is row m of the
	temporal adjacency. The QP objective at w equals the block objective at L(w) exactly, coupling constant included.
	'''
	if (beta <= 0):
		raise ConfigError("beta must be > 0")
	nNodes = Xm.nNodes
	couplingRow = np.array(temporalWeightsRow, dtype=np.float64).reshape(-1)
	if (couplingRow.shape[0] != len(otherSpatial)):
		raise DimensionMismatchError("Temporal row has {} entries for {} windows".format(couplingRow.shape[0], len(otherSpatial)))

	couplingTotal = 0.0
	couplingTarget = np.zeros(edgeCount(nNodes))
	constant = 0.0
	for j, Lj in enumerate(otherSpatial):
		if (j == m):
			continue
		weight = couplingRow[j]
		if (weight < -1e-12):
			raise InvalidTemporalGraphError("Negative temporal weight {} between windows {} and {}".format(weight, m, j))
		if (weight <= 0):
			continue
		if (Lj.nNodes != nNodes):
			raise DimensionMismatchError("Window {} has {} nodes, window {} has {}".format(m, nNodes, j, Lj.nNodes))
		wj = weightsFromLaplacian(Lj)
		couplingTotal += weight
		couplingTarget += weight*wj.weights
		constant += weight*Lj.frobeniusSq()

	if (distances is None):
		distances = pairwiseDistances(Xm)
	linearTerm = distances - 2.0*applyFrobeniusOperator(nNodes, couplingTarget)
	scale = beta + couplingTotal

	def quadraticOperator(v):
		return scale*applyFrobeniusOperator(nNodes, v)

	return SimplexQP(linearTerm, quadraticOperator, nNodes/2.0, 4.0*scale, constant=constant, curvatureBound=2.0*scale*frobeniusCurvature(nNodes), name="spatial_{:04d}".format(m + 1))


def assembleTemporalSubproblem(spatial, beta):
	'''
	QP over the M(M-1)/2 temporal edge weights. Linear term holds the pairwise spatial-Laplacian distances
	'''
	nWindows = len(spatial)
	if (nWindows < 2):
		raise DegenerateTemporalError("Temporal graph needs at least 2 windows, got {}".format(nWindows))
	if (beta <= 0):
		raise ConfigError("beta must be > 0")

	def quadraticOperator(v):
		return beta*applyFrobeniusOperator(nWindows, v)

	return SimplexQP(temporalDistances(spatial), quadraticOperator, nWindows/2.0, 4.0*beta, curvatureBound=2.0*beta*frobeniusCurvature(nWindows), name="temporal")


#######################
# Algorithm
#######################
def normalizeWindows(windows):
	'''
	Rescales each window so its pairwise-distance vector has unit mean. Returns (windows, scales)
	'''
	scaledWindows = []
	scales = []
	for X in windows:
		meanDistance = float(np.mean(pairwiseDistances(X)))
		scale = 1.0/np.sqrt(meanDistance) if (meanDistance > 0) else 1.0
		scaledWindows.append(X.scaled(scale))
		scales.append(scale)
	return scaledWindows, scales


def learnSmoothGraph(X, beta, kktTol=g_KktTol, maxIter=g_MaxIter, w0=None):
	'''
	Single-graph smooth-signal Laplacian learning: min tr(X^T L X) + beta ||L||_F^2 over valid Laplacians
	'''
	qp = assembleSpatialSubproblem(0, X, [GraphLaplacian.empty(X.nNodes)], [0.0], beta)
	report = solveSimplexQP(qp, w0=w0, maxIter=maxIter, kktTol=kktTol)
	return laplacianFromWeights(EdgeWeightVector(X.nNodes, report.solution)), report


def _solveBlock(qp, w0, config):
	try:
		return solveSimplexQP(qp, w0=w0, maxIter=config.maxSolverIter, kktTol=config.kktTol)
	except PipelineError as e:
		raise SolverBlockError(qp.name, e)


def runSpaTeoGL(windows, config=None, logger=None):
	'''
	Alternates spatial sweeps and temporal updates until the relative objective decrease drops below
	config.outerRelTol or config.maxOuterIter is reached
	'''
	if (config is None):
		config = SpaTeoGLConfig()
	if (logger is None):
		logger = g_Logger

	nWindows = len(windows)
	if (nWindows < 1):
		raise DimensionMismatchError("Need at least one window")
	nNodes = windows[0].nNodes
	for m, X in enumerate(windows):
		if (X.nNodes != nNodes):
			raise DimensionMismatchError("Window {} has {} nodes, expected {}".format(m, X.nNodes, nNodes))
	if (nNodes < 2):
		raise DimensionMismatchError("Need at least 2 nodes per window, got {}".format(nNodes))

	if (config.normalizeDistances):
		windows, windowScales = normalizeWindows(windows)
	else:
		windowScales = [1.0]*nWindows
	distances = [pairwiseDistances(X) for X in windows]

	#Uniform complete graphs
	spatialWeights = [EdgeWeightVector.uniform(nNodes).weights for m in range(nWindows)]
	spatial = [laplacianFromWeights(EdgeWeightVector(nNodes, w)) for w in spatialWeights]
	if (nWindows >= 2):
		temporalWeights = EdgeWeightVector.uniform(nWindows).weights
		temporal = laplacianFromWeights(EdgeWeightVector(nWindows, temporalWeights))
	else:
		temporalWeights = None
		temporal = GraphLaplacian.empty(1)

	initialObjective = jointObjective(windows, spatial, temporal, config.beta)
	logger.info("SpaTeoGL start (M={}, N={}, beta={}, mode={}) objective={:.12g}".format(nWindows, nNodes, config.beta, config.sweepMode.value, initialObjective))

	objectiveTrace = []
	solverLog = []
	converged = False
	previousObjective = initialObjective
	executor = None
	if ((config.sweepMode == SWEEP_MODE.JACOBI) and (config.threads > 1)):
		executor = ThreadPoolExecutor(max_workers=config.threads)

	try:
		for outerIteration in tqdm(range(config.maxOuterIter), ascii=False, ncols=80, disable=not config.showProgress):
			temporalAdjacency = temporal.adjacency()

			#Spatial sweep
			if (config.sweepMode == SWEEP_MODE.GAUSS_SEIDEL):
				for m in range(nWindows):
					qp = assembleSpatialSubproblem(m, windows[m], spatial, temporalAdjacency[m, :], config.beta, distances=distances[m])
					report = _solveBlock(qp, spatialWeights[m], config)
					spatialWeights[m] = np.array(report.solution)
					spatial[m] = laplacianFromWeights(EdgeWeightVector(nNodes, spatialWeights[m]))
					solverLog.append(dict({"OuterIteration": outerIteration + 1}, **report.toDict()))
			else:
				snapshot = list(spatial)
				problems = [assembleSpatialSubproblem(m, windows[m], snapshot, temporalAdjacency[m, :], config.beta, distances=distances[m]) for m in range(nWindows)]
				if (executor):
					reports = list(executor.map(lambda m: _solveBlock(problems[m], spatialWeights[m], config), range(nWindows)))
				else:
					reports = [_solveBlock(problems[m], spatialWeights[m], config) for m in range(nWindows)]
				for m, report in enumerate(reports):
					spatialWeights[m] = np.array(report.solution)
					spatial[m] = laplacianFromWeights(EdgeWeightVector(nNodes, spatialWeights[m]))
					solverLog.append(dict({"OuterIteration": outerIteration + 1}, **report.toDict()))

			#Temporal update
			if (nWindows >= 2):
				qp = assembleTemporalSubproblem(spatial, config.beta)
				report = _solveBlock(qp, temporalWeights, config)
				temporalWeights = np.array(report.solution)
				temporal = laplacianFromWeights(EdgeWeightVector(nWindows, temporalWeights))
				solverLog.append(dict({"OuterIteration": outerIteration + 1}, **report.toDict()))

			objective = jointObjective(windows, spatial, temporal, config.beta)
			objectiveTrace.append(objective)
			logger.info("Outer iteration {}: objective={:.12g}".format(outerIteration + 1, objective))

			if ((objective > previousObjective + g_MonotoneSlack) and (config.sweepMode == SWEEP_MODE.GAUSS_SEIDEL)):
				logger.warning("Objective increased from {:.12g} to {:.12g} at outer iteration {}".format(previousObjective, objective, outerIteration + 1))

			relativeDecrease = (previousObjective - objective)/max(abs(previousObjective), 1e-300)
			previousObjective = objective
			if (relativeDecrease < config.outerRelTol):
				converged = True
				break
	finally:
		if (executor):
			executor.shutdown(wait=True)

	if (not converged):
		logger.warning("SpaTeoGL reached MaxOuterIter={} before OuterRelTol={}".format(config.maxOuterIter, config.outerRelTol))
	logger.info("SpaTeoGL finished after {} outer iterations, objective={:.12g}".format(len(objectiveTrace), previousObjective))

	return SpaTeoGLResult(spatial, temporal, objectiveTrace, converged, initialObjective=initialObjective, solverLog=solverLog, windowScales=windowScales, config=config)


#######################
# Result directory
#######################
def writeResult(result, outputDir, nodeIds=None, windowLabels=None):
	'''
	spatial_0001.csv .. spatial_MMMM.csv, temporal.csv, objective_trace.csv, solver_log.csv, window_scales.csv
	and config.json
	'''
	for m, L in enumerate(result.spatialLaplacians):
		writeLaplacianCsv(L, os.path.join(outputDir, "spatial_{:04d}.csv".format(m + 1)), nodeIds)
		writeEdgeListCsv(weightsFromLaplacian(L), os.path.join(outputDir, "spatial_{:04d}_edges.csv".format(m + 1)), nodeIds)
	writeLaplacianCsv(result.temporalLaplacian, os.path.join(outputDir, "temporal.csv"))

	utils.writeCsv(pd.DataFrame({"Iteration": np.arange(1, len(result.objectiveTrace) + 1), "Objective": result.objectiveTrace}), os.path.join(outputDir, "objective_trace.csv"))
	solverColumns = ["OuterIteration", "Block", "Iterations", "Restarts", "InitialObjective", "Objective", "KktResidual", "Converged"]
	utils.writeCsv(pd.DataFrame(result.solverLog, columns=solverColumns), os.path.join(outputDir, "solver_log.csv"))
	utils.writeCsv(pd.DataFrame({"Window": np.arange(result.nWindows), "Scale": result.windowScales}), os.path.join(outputDir, "window_scales.csv"))
	if (windowLabels is not None):
		writeWindowLabels(windowLabels, os.path.join(outputDir, "window_labels.csv"))

	configDict = result.config.toDict() if (result.config) else {}
	configDict["InitialObjective"] = result.initialObjective
	configDict["FinalObjective"] = result.finalObjective()
	configDict["Converged"] = result.converged
	configDict["OuterIterations"] = len(result.objectiveTrace)
	configDict["NWindows"] = result.nWindows
	configDict["NNodes"] = result.nNodes
	utils.dictToJsonFile(configDict, os.path.join(outputDir, "config.json"))


def readResult(outputDir):
	'''
	Loads a result directory written by writeResult(). Returns (result, nodeIds)
	'''
	configDict = utils.loadJsonFile(os.path.join(outputDir, "config.json"))
	nWindows = int(configDict["NWindows"])

	spatial = []
	nodeIds = None
	for m in range(nWindows):
		L, nodeIds = readLaplacianCsv(os.path.join(outputDir, "spatial_{:04d}.csv".format(m + 1)))
		spatial.append(L)
	temporal, _ = readLaplacianCsv(os.path.join(outputDir, "temporal.csv"))
	trace = utils.readCsv(os.path.join(outputDir, "objective_trace.csv"))["Objective"].tolist()

	config = None
	if ("Beta" in configDict):
		config = SpaTeoGLConfig.fromSettings(configDict)
	result = SpaTeoGLResult(spatial, temporal, trace, configDict.get("Converged", False), initialObjective=configDict.get("InitialObjective"), config=config)
	return result, nodeIds
