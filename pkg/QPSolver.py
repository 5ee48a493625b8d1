'''
Exact solver for the strictly convex block subproblems of SpaTeoGL.

Every block update reduces to
	minimize   c^T w + w^T Q w + constant
	subject to w >= 0, sum(w) = s
with Q symmetric PSD and strongly convex (the beta ||L||_F^2 term). The feasible set is a scaled simplex with a
closed-form Euclidean projection, so the solver is accelerated projected gradient with a monotone restart.
'''
import itertools
import math

import numpy as np

from PipelineErrors import InvalidProblemError
from GraphClasses import EdgeWeightVector, nodeCountFromEdges
import utils


g_Logger = utils.getLogger("QPSolver")

g_KktTol = 1e-7
g_MaxIter = 5000
g_PowerTol = 1e-6
g_PowerMaxIter = 2000
g_StepSafety = 2.0
g_RoundingSlack = 1e-14


#######################
# Projection
#######################
def projectScaledSimplex(v, s):
	'''
	Euclidean projection of v onto {x >= 0, sum(x) = s}. Sort-based threshold search.
	'''
	v = np.asarray(v, dtype=np.float64).reshape(-1)
	if (not np.all(np.isfinite(v))):
		raise InvalidProblemError("Cannot project a non-finite vector onto the simplex")
	if ((not np.isfinite(s)) or (s <= 0)):
		raise InvalidProblemError("Simplex sum must be positive, got {}".format(s))
	if (v.shape[0] == 0):
		raise InvalidProblemError("Cannot project an empty vector onto the simplex")

	u = np.sort(v)[::-1]
	cumulative = np.cumsum(u) - s
	ranks = np.arange(1, v.shape[0] + 1)
	active = np.nonzero(u - cumulative/ranks > 0)[0]
	rho = active[-1] if (len(active) > 0) else 0
	theta = cumulative[rho]/(rho + 1)
	x = np.maximum(v - theta, 0.0)

	#Remove rounding drift on the sum. Only positive entries move
	drift = np.sum(x) - s
	if (drift != 0.0):
		positive = x > 0
		x[positive] -= drift/np.count_nonzero(positive)
		x = np.maximum(x, 0.0)
	return x


def powerIteration(operator, dimension, tol=g_PowerTol, maxIter=g_PowerMaxIter):
	'''
	Largest eigenvalue of a symmetric PSD operator. Deterministic start vector.
	Raises InvalidProblemError if a negative Rayleigh quotient shows the operator is not PSD
	'''
	rng = np.random.default_rng(0)
	v = np.ones(dimension) + 0.1*rng.standard_normal(dimension)
	v /= np.linalg.norm(v)

	eigenvalue = 0.0
	for iteration in range(maxIter):
		u = operator(v)
		rayleigh = float(np.dot(v, u))
		if (rayleigh < -1e-12*max(1.0, abs(eigenvalue))):
			raise InvalidProblemError("Quadratic operator has negative curvature (Rayleigh quotient {})".format(rayleigh))
		norm = np.linalg.norm(u)
		if (norm == 0):
			return 0.0
		v = u/norm
		if (abs(rayleigh - eigenvalue) <= tol*max(abs(rayleigh), 1e-300)):
			return max(rayleigh, norm)
		eigenvalue = rayleigh

	g_Logger.debug("Power iteration did not reach tol={} in {} iterations".format(tol, maxIter))
	return max(eigenvalue, float(np.linalg.norm(operator(v))))


#######################
# Problem and report
#######################
class SimplexQP:
	'''
	minimize c^T w + w^T Q w + constant over {w >= 0, sum(w) = simplexSum}

	quadraticOperator is a function v -> Qv. The additive constant is carried so block objectives
	reconcile with the full joint objective.
	'''
	def __init__(self, linearTerm, quadraticOperator, simplexSum, strongConvexity, constant=0.0, curvatureBound=None, name="SimplexQP"):
		self.linearTerm = np.array(linearTerm, dtype=np.float64).reshape(-1)
		self.linearTerm.setflags(write=False)
		self.dimension = self.linearTerm.shape[0]
		self.quadraticOperator = quadraticOperator
		self.simplexSum = float(simplexSum)
		self.strongConvexity = float(strongConvexity)
		self.constant = float(constant)
		self.name = name

		if (self.dimension < 1):
			raise InvalidProblemError("{}: empty problem".format(name))
		if (not np.all(np.isfinite(self.linearTerm))):
			raise InvalidProblemError("{}: linear term must be finite".format(name))
		if (self.simplexSum <= 0):
			raise InvalidProblemError("{}: simplex sum must be positive".format(name))
		if (self.strongConvexity <= 0):
			raise InvalidProblemError("{}: strong convexity must be positive, got {}".format(name, strongConvexity))

		testVector = self.quadraticOperator(np.zeros(self.dimension))
		if (np.shape(testVector) != (self.dimension,)):
			raise InvalidProblemError("{}: quadratic operator does not match linear term dimension {}".format(name, self.dimension))

		#Largest eigenvalue of 2Q
		self.curvatureBound = curvatureBound

	@classmethod
	def fromDense(cls, linearTerm, quadraticMatrix, simplexSum, constant=0.0, name="SimplexQP"):
		Q = np.array(quadraticMatrix, dtype=np.float64)
		if ((Q.ndim != 2) or (Q.shape[0] != Q.shape[1]) or (Q.shape[0] != np.size(linearTerm))):
			raise InvalidProblemError("{}: Q must be square and match c".format(name))
		if (np.max(np.abs(Q - Q.T)) > 1e-12*max(1.0, np.max(np.abs(Q)))):
			raise InvalidProblemError("{}: Q must be symmetric".format(name))
		eigenvalues = np.linalg.eigvalsh(Q)
		if (eigenvalues[0] <= 0):
			raise InvalidProblemError("{}: Q must be positive definite (min eigenvalue {})".format(name, eigenvalues[0]))
		Q.setflags(write=False)
		return cls(linearTerm, lambda v: Q.dot(v), simplexSum, 2.0*eigenvalues[0], constant=constant, curvatureBound=2.0*eigenvalues[-1], name=name)

	def applyQuadratic(self, w):
		return self.quadraticOperator(w)

	def objective(self, w):
		w = np.asarray(w, dtype=np.float64)
		return float(np.dot(self.linearTerm, w) + np.dot(w, self.quadraticOperator(w)) + self.constant)

	def gradient(self, w):
		return self.linearTerm + 2.0*self.quadraticOperator(w)

	def denseQuadratic(self):
		'''
		Materializes Q column by column. Only for small problems and tests
		'''
		identity = np.eye(self.dimension)
		Q = np.column_stack([self.quadraticOperator(identity[:, k]) for k in range(self.dimension)])
		return 0.5*(Q + Q.T)

	def estimateCurvature(self):
		'''
		Largest eigenvalue of 2Q (gradient Lipschitz constant) by power iteration
		'''
		if (self.curvatureBound is None):
			self.curvatureBound = powerIteration(lambda v: 2.0*self.quadraticOperator(v), self.dimension)
		return self.curvatureBound

	def kktResidual(self, w, gradient=None):
		'''
		Projected-gradient residual ||w - P(w - grad f(w))||
		'''
		if (gradient is None):
			gradient = self.gradient(w)
		return float(np.linalg.norm(w - projectScaledSimplex(w - gradient, self.simplexSum)))

	def __str__(self):
		return "SimplexQP(name={}, dim={}, sum={}, mu={:.4g})".format(self.name, self.dimension, self.simplexSum, self.strongConvexity)


class SolverReport:
	'''
	Outcome of one solveSimplexQP() call
	'''
	def __init__(self, solution, objective, iterations, kktResidual, converged, kktTol, initialObjective, restarts=0, name="SimplexQP"):
		solution = np.array(solution, dtype=np.float64)
		solution.setflags(write=False)
		self.solution = solution
		self.objective = float(objective)
		self.iterations = int(iterations)
		self.kktResidual = float(kktResidual)
		self.converged = bool(converged) and (self.kktResidual <= kktTol)
		self.kktTol = float(kktTol)
		self.initialObjective = float(initialObjective)
		self.restarts = int(restarts)
		self.name = name

	def asWeights(self):
		return EdgeWeightVector(nodeCountFromEdges(self.solution.shape[0]), self.solution)

	def toDict(self):
		return {
			"Block": self.name,
			"Iterations": self.iterations,
			"Restarts": self.restarts,
			"InitialObjective": self.initialObjective,
			"Objective": self.objective,
			"KktResidual": self.kktResidual,
			"Converged": self.converged
		}

	def __str__(self):
		return "SolverReport(block={}, iterations={}, objective={:.10g}, kkt={:.3g}, converged={})".format(self.name, self.iterations, self.objective, self.kktResidual, self.converged)


#######################
# Solvers
#######################
def solveSimplexQP(qp, w0=None, maxIter=g_MaxIter, kktTol=g_KktTol, stepSafety=g_StepSafety):
	'''
	Accelerated projected gradient with monotone restart.

	The accepted iterates never increase the objective: a momentum step that would increase it is rejected
	and the momentum is reset. The returned objective is therefore never above the objective at w0.
	'''
	if (maxIter < 1):
		raise InvalidProblemError("maxIter must be >= 1")

	#Feasible start
	if (w0 is None):
		x = np.full(qp.dimension, qp.simplexSum/qp.dimension)
	else:
		if (isinstance(w0, EdgeWeightVector)):
			w0 = w0.weights
		x = np.array(w0, dtype=np.float64).reshape(-1)
		if (x.shape[0] != qp.dimension):
			raise InvalidProblemError("{}: start point has dimension {}, expected {}".format(qp.name, x.shape[0], qp.dimension))
		if ((np.min(x) < 0) or (abs(np.sum(x) - qp.simplexSum) > 1e-12*max(1.0, qp.simplexSum))):
			x = projectScaledSimplex(x, qp.simplexSum)

	curvature = stepSafety*qp.estimateCurvature()
	if (curvature <= 0):
		curvature = 1.0
	curvatureScale = max(curvature, 1e-300)

	Qx = qp.applyQuadratic(x)
	fx = float(np.dot(qp.linearTerm, x) + np.dot(x, Qx) + qp.constant)
	gx = qp.linearTerm + 2.0*Qx
	residual = qp.kktResidual(x, gx)
	initialObjective = fx
	xStart = x

	y = x
	gy = gx
	t = 1.0
	restarts = 0
	stalls = 0
	iteration = 0
	while ((residual > kktTol) and (iteration < maxIter)):
		iteration += 1
		z = projectScaledSimplex(y - gy/curvature, qp.simplexSum)
		Qz = qp.applyQuadratic(z)
		fz = float(np.dot(qp.linearTerm, z) + np.dot(z, Qz) + qp.constant)

		#Increases at rounding level count as no change, otherwise the solver stalls just short of kktTol
		if (fz <= fx + g_RoundingSlack*max(1.0, abs(fx))):
			d = z - x
			dNormSq = float(np.dot(d, d))
			if (dNormSq > 0):
				dQd = float(np.dot(d, qp.applyQuadratic(d)))
				if (dQd < -1e-10*dNormSq*curvatureScale):
					raise InvalidProblemError("{}: negative curvature {} along an iterate direction, Q is not PSD".format(qp.name, dQd/dNormSq))
				stalls = 0
			else:
				stalls += 1

			tNext = (1.0 + math.sqrt(1.0 + 4.0*t*t))/2.0
			momentum = (t - 1.0)/tNext
			x, Qx, fx = z, Qz, fz
			gx = qp.linearTerm + 2.0*Qx
			residual = qp.kktResidual(x, gx)
			if (momentum > 0):
				y = x + momentum*d
				gy = qp.gradient(y)
			else:
				y = x
				gy = gx
			t = tNext
		else:
			if (y is x):
				#A plain projected gradient step from x went uphill, so the curvature estimate is too small
				curvature *= 2.0
				stalls += 1
			restarts += 1
			t = 1.0
			y = x
			gy = gx

		if (stalls > 50):
			g_Logger.debug("{}: no progress at kkt residual {:.3g}, stopping".format(qp.name, residual))
			break

	if (fx > initialObjective):
		x, fx = xStart, initialObjective
		residual = qp.kktResidual(x, qp.gradient(x))

	converged = residual <= kktTol
	if (not converged):
		g_Logger.warning("{}: not converged after {} iterations (kkt residual {:.3g} > {:.3g})".format(qp.name, iteration, residual, kktTol))

	return SolverReport(x, fx, iteration, residual, converged, kktTol, initialObjective, restarts=restarts, name=qp.name)


def _simplexGrid(dimension, nSteps):
	'''
	All integer vectors of length dimension with entries >= 0 summing to nSteps (stars and bars)
	'''
	if (dimension == 1):
		return np.array([[nSteps]])
	bars = np.array(list(itertools.combinations(range(nSteps + dimension - 1), dimension - 1)))
	padded = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), nSteps + dimension - 1)])
	return np.diff(padded, axis=1) - 1


def bruteForceSimplexQP(qp, s, gridStep):
	'''
	Exhaustive search over the simplex discretized with step ~gridStep. Test oracle for dimension <= 4
	'''
	if (qp.dimension > 4):
		raise InvalidProblemError("Brute force search refused for dimension {} > 4".format(qp.dimension))
	if (gridStep <= 0):
		raise InvalidProblemError("gridStep must be positive")

	nSteps = max(1, int(round(s/gridStep)))
	points = _simplexGrid(qp.dimension, nSteps)*(s/nSteps)
	Q = qp.denseQuadratic()
	values = points.dot(qp.linearTerm) + np.einsum("pi,ij,pj->p", points, Q, points) + qp.constant
	best = int(np.argmin(values))
	return points[best].copy(), float(values[best])
