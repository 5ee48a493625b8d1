'''
This file contains the graph data types used everywhere in the toolkit:
	-EdgeWeightVector
		Nonnegative upper-triangular edge weights of one undirected graph, in canonical lexicographic (i,j), i<j order.
		This is the decision variable of every graph-learning subproblem.

	-GraphLaplacian
		Combinatorial Laplacian L = D - A. The valid set is
			{L symmetric PSD, L_ij <= 0 (i != j), L1 = 0, tr(L) = N}
		Trace-feasibility is checked separately, since the M=1 temporal graph is the empty graph.

	-SignalMatrix
		N x K matrix of graph signals. Row n is the feature vector of node n.

It also holds the conversions between weights and Laplacians, the smoothness quadratic form tr(X^T L X),
and the dense / edge-list CSV formats.
'''
import math
from functools import lru_cache

import numpy as np
import pandas as pd

from PipelineErrors import InvalidWeightsError, InvalidLaplacianError, DimensionMismatchError, InputOutputError
import utils


g_TolPsd = 1e-8
g_TolTrace = 1e-9
g_TolStructure = 1e-9


#######################
# Edge indexing
#######################
def edgeCount(nNodes):
	return (nNodes*(nNodes-1))//2


def nodeCountFromEdges(nEdges):
	'''
	Inverts edgeCount(). Raises InvalidWeightsError if nEdges is not a triangular number
	'''
	nNodes = int(round((1 + math.sqrt(1 + 8*nEdges))/2))
	if (edgeCount(nNodes) != nEdges):
		raise InvalidWeightsError("{} edges does not correspond to a complete undirected graph".format(nEdges))
	return nNodes


@lru_cache(maxsize=64)
def edgeIndex(nNodes):
	'''
	Returns (rows, cols) of the canonical edge order. Pairs (i,j), i<j, lexicographic
	'''
	rows, cols = np.triu_indices(nNodes, k=1)
	rows.setflags(write=False)
	cols.setflags(write=False)
	return rows, cols


@lru_cache(maxsize=64)
def degreeOperator(nNodes):
	'''
	Returns the N x E matrix S mapping edge weights to node degrees
	'''
	rows, cols = edgeIndex(nNodes)
	S = np.zeros((nNodes, edgeCount(nNodes)))
	edgeIds = np.arange(edgeCount(nNodes))
	S[rows, edgeIds] = 1.0
	S[cols, edgeIds] = 1.0
	S.setflags(write=False)
	return S


def applyFrobeniusOperator(nNodes, vector):
	'''
	Applies P = 2I + S^T S, the operator with ||L(w)||_F^2 = w^T P w
	'''
	S = degreeOperator(nNodes)
	return 2.0*vector + S.T.dot(S.dot(vector))


#######################
# Value types
#######################
class EdgeWeightVector:
	'''
	Immutable nonnegative edge-weight vector of an nNodes graph
	'''
	def __init__(self, nNodes, weights):
		self.nNodes = int(nNodes)
		if (self.nNodes < 1):
			raise InvalidWeightsError("nNodes must be positive, got {}".format(nNodes))

		weightArray = np.array(weights, dtype=np.float64).reshape(-1)
		if (weightArray.shape[0] != edgeCount(self.nNodes)):
			raise InvalidWeightsError("Expected {} weights for {} nodes, got {}".format(edgeCount(self.nNodes), self.nNodes, weightArray.shape[0]))
		if (not np.all(np.isfinite(weightArray))):
			raise InvalidWeightsError("Edge weights must be finite")
		if (np.any(weightArray < 0)):
			raise InvalidWeightsError("Edge weights must be nonnegative (min={})".format(weightArray.min()))

		weightArray.setflags(write=False)
		self.weights = weightArray
		self.hash = utils.arrayHash(weightArray)

	@classmethod
	def uniform(cls, nNodes):
		'''
		Complete graph with every weight 1/(n-1), so the weights sum to n/2
		'''
		if (nNodes < 2):
			return cls(nNodes, [])
		return cls(nNodes, np.full(edgeCount(nNodes), 1.0/(nNodes-1)))

	def total(self):
		return float(np.sum(self.weights))

	def isTraceFeasible(self, tol=g_TolTrace):
		return abs(self.total() - self.nNodes/2.0) <= tol

	def degrees(self):
		return degreeOperator(self.nNodes).dot(self.weights)

	def frobeniusSq(self):
		'''
		||L(w)||_F^2 = 2||w||^2 + ||Sw||^2
		'''
		return float(2.0*np.dot(self.weights, self.weights) + np.sum(self.degrees()**2))

	def __len__(self):
		return self.weights.shape[0]

	def __str__(self):
		return "EdgeWeightVector_{}(nNodes={}, total={:.6g})".format(self.hash, self.nNodes, self.total())

	def __repr__(self):
		return str(self)


class GraphLaplacian:
	'''
	Immutable combinatorial Laplacian.
	Structure (symmetry, nonpositive off-diagonals, zero row sums) is always validated.
	The PSD eigencheck only runs when checkPsd is set, for externally loaded matrices.
	'''
	def __init__(self, matrix, checkPsd=False, tol=g_TolStructure, tolPsd=g_TolPsd):
		L = np.array(matrix, dtype=np.float64)
		if ((L.ndim != 2) or (L.shape[0] != L.shape[1])):
			raise InvalidLaplacianError("Laplacian must be square, got shape {}".format(L.shape))
		if (not np.all(np.isfinite(L))):
			raise InvalidLaplacianError("Laplacian entries must be finite")

		scale = max(1.0, float(np.max(np.abs(L)))) if (L.size > 0) else 1.0
		if (np.max(np.abs(L - L.T), initial=0.0) > tol*scale):
			raise InvalidLaplacianError("Laplacian is not symmetric")
		offDiagonal = L - np.diag(np.diag(L))
		if (np.max(offDiagonal, initial=0.0) > tol*scale):
			raise InvalidLaplacianError("Laplacian has positive off-diagonal entries (max={})".format(np.max(offDiagonal)))
		if (np.max(np.abs(L.sum(axis=1)), initial=0.0) > tol*scale*max(1, L.shape[0])):
			raise InvalidLaplacianError("Laplacian rows do not sum to zero")
		if (checkPsd and (L.shape[0] > 0)):
			minEig = float(np.linalg.eigvalsh(L)[0])
			if (minEig < -tolPsd):
				raise InvalidLaplacianError("Laplacian is not PSD (min eigenvalue={})".format(minEig))

		L.setflags(write=False)
		self.matrix = L
		self.nNodes = L.shape[0]
		self.hash = utils.arrayHash(L)

	@classmethod
	def empty(cls, nNodes):
		return cls(np.zeros((nNodes, nNodes)))

	def trace(self):
		return float(np.trace(self.matrix))

	def isTraceFeasible(self, tol=g_TolTrace):
		return abs(self.trace() - self.nNodes) <= tol

	def adjacency(self):
		A = -self.matrix.copy()
		np.fill_diagonal(A, 0.0)
		return A

	def degrees(self):
		return np.diag(self.matrix).copy()

	def frobeniusSq(self):
		return float(np.sum(self.matrix**2))

	def minEigenvalue(self):
		return float(np.linalg.eigvalsh(self.matrix)[0])

	def constraintViolations(self):
		'''
		Largest violation of each valid-Laplacian constraint
		'''
		offDiagonal = self.matrix - np.diag(np.diag(self.matrix))
		return {
			"RowSum": float(np.max(np.abs(self.matrix.sum(axis=1)), initial=0.0)),
			"Trace": abs(self.trace() - self.nNodes),
			"OffDiagonal": float(np.max(offDiagonal, initial=0.0)),
			"Symmetry": float(np.max(np.abs(self.matrix - self.matrix.T), initial=0.0)),
			"MinEigenvalue": self.minEigenvalue() if (self.nNodes > 0) else 0.0
		}

	def __str__(self):
		return "GraphLaplacian_{}(nNodes={}, trace={:.6g})".format(self.hash, self.nNodes, self.trace())

	def __repr__(self):
		return str(self)


class SignalMatrix:
	'''
	Immutable N x K signal matrix. Rows are node feature vectors
	'''
	def __init__(self, values, nodeNames=None):
		X = np.array(values, dtype=np.float64)
		if (X.ndim == 1):
			X = X.reshape(-1, 1)
		if ((X.ndim != 2) or (X.shape[0] < 1) or (X.shape[1] < 1)):
			raise DimensionMismatchError("SignalMatrix must be a nonempty 2-D matrix, got shape {}".format(X.shape))
		if (not np.all(np.isfinite(X))):
			raise DimensionMismatchError("SignalMatrix entries must be finite")

		X.setflags(write=False)
		self.values = X
		self.nNodes, self.nSamples = X.shape
		self.nodeNames = list(nodeNames) if (nodeNames is not None) else [str(i) for i in range(self.nNodes)]

	def scaled(self, factor):
		return SignalMatrix(self.values*factor, self.nodeNames)

	def permuted(self, permutation):
		return SignalMatrix(self.values[permutation, :], [self.nodeNames[i] for i in permutation])

	def __str__(self):
		return "SignalMatrix(nNodes={}, nSamples={})".format(self.nNodes, self.nSamples)

	def __repr__(self):
		return str(self)


#######################
# Operations
#######################
def laplacianFromWeights(w):
	'''
	L = D - A with A_ij = w_(i,j)
	'''
	if (np.any(w.weights < 0)):
		raise InvalidWeightsError("Edge weights must be nonnegative")

	nNodes = w.nNodes
	rows, cols = edgeIndex(nNodes)
	L = np.zeros((nNodes, nNodes))
	L[rows, cols] = -w.weights
	L[cols, rows] = -w.weights
	L[np.diag_indices(nNodes)] = -L.sum(axis=1)
	return GraphLaplacian(L)


def weightsFromLaplacian(L, tol=g_TolStructure):
	'''
	Inverse of laplacianFromWeights. Off-diagonals within tol of zero on the positive side are clipped to 0
	'''
	if (not isinstance(L, GraphLaplacian)):
		L = GraphLaplacian(L, tol=tol)

	rows, cols = edgeIndex(L.nNodes)
	weights = -L.matrix[rows, cols]
	return EdgeWeightVector(L.nNodes, np.maximum(weights, 0.0))


def smoothness(X, L):
	'''
	tr(X^T L X) = sum over edges (i<j) of w_ij ||x_(i) - x_(j)||^2
	'''
	if (X.nNodes != L.nNodes):
		raise DimensionMismatchError("Signal has {} nodes but Laplacian has {}".format(X.nNodes, L.nNodes))

	return max(0.0, float(np.sum(X.values * L.matrix.dot(X.values))))


def pairwiseDistances(X):
	'''
	Squared row distances ||x_(i) - x_(j)||^2 in canonical edge order, so that smoothness(X, L(w)) = d^T w
	'''
	rows, cols = edgeIndex(X.nNodes)
	differences = X.values[rows, :] - X.values[cols, :]
	return np.einsum("ek,ek->e", differences, differences)


def vecLaplacian(L):
	'''
	Column-wise vectorization vec(L)
	'''
	return np.asarray(L.matrix).reshape(-1, order="F").copy()


def laplacianMean(laplacians):
	'''
	Entrywise mean of equally sized Laplacians. The valid set is convex, so the mean is valid
	'''
	if (len(laplacians) == 0):
		raise DimensionMismatchError("Cannot average an empty list of Laplacians")
	nNodes = laplacians[0].nNodes
	for L in laplacians:
		if (L.nNodes != nNodes):
			raise DimensionMismatchError("Cannot average Laplacians of different sizes")

	return GraphLaplacian(np.mean([L.matrix for L in laplacians], axis=0))


#######################
# CSV formats
#######################
def writeLaplacianCsv(L, filePath, nodeIds=None):
	'''
	Dense CSV. Header row holds node ids, each following row is one matrix row
	'''
	if (nodeIds is None):
		nodeIds = [str(i) for i in range(L.nNodes)]
	if (len(nodeIds) != L.nNodes):
		raise DimensionMismatchError("{} node ids for a {}-node Laplacian".format(len(nodeIds), L.nNodes))

	utils.writeCsv(pd.DataFrame(L.matrix, columns=[str(nodeId) for nodeId in nodeIds]), filePath)


def readLaplacianCsv(filePath):
	'''
	Returns (GraphLaplacian, nodeIds). Loaded matrices are eigen-checked
	'''
	try:
		dataframe = utils.readCsv(filePath, dtype=np.float64)
	except InputOutputError:
		raise
	except Exception as e:
		raise InvalidLaplacianError("Could not parse \"{}\": {}".format(filePath, e))

	nodeIds = [str(column) for column in dataframe.columns]
	return GraphLaplacian(dataframe.to_numpy(), checkPsd=True), nodeIds


def writeEdgeListCsv(w, filePath, nodeIds=None):
	'''
	Edge-list CSV with columns i,j,weight for every pair i<j (zero weights included)
	'''
	rows, cols = edgeIndex(w.nNodes)
	table = pd.DataFrame({"i": rows, "j": cols, "weight": w.weights})
	if (nodeIds is not None):
		table.insert(2, "node_i", [nodeIds[i] for i in rows])
		table.insert(3, "node_j", [nodeIds[j] for j in cols])
	utils.writeCsv(table, filePath)


def readEdgeListCsv(filePath):
	try:
		table = utils.readCsv(filePath)
	except InputOutputError:
		raise
	except Exception as e:
		raise InvalidWeightsError("Could not parse \"{}\": {}".format(filePath, e))

	nNodes = nodeCountFromEdges(len(table.index))
	rows, cols = edgeIndex(nNodes)
	weights = np.zeros(edgeCount(nNodes))
	order = {(int(i), int(j)): e for e, (i, j) in enumerate(zip(rows, cols))}
	for i, j, weight in zip(table["i"], table["j"], table["weight"]):
		key = (int(min(i, j)), int(max(i, j)))
		if (key not in order):
			raise InvalidWeightsError("Edge ({}, {}) is not a valid pair for {} nodes".format(i, j, nNodes))
		weights[order[key]] = weight
	return EdgeWeightVector(nNodes, weights)
