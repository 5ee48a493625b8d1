'''
Horizontal-visibility-graph baseline for SOZ electrode classification.

Per electrode, three windows (pre-onset, onset, post-onset) are turned into horizontal visibility graphs, averaged,
and flattened to their strict upper triangle. The feature matrix is reduced with PCA and classified with
class-balanced logistic regression, evaluated by stratified cross-validation within each recording.
'''
import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.model_selection import StratifiedKFold
from tqdm import tqdm

from PipelineErrors import PipelineError, FeatureError, ModelTrainingError
from Analysis import perClassMetrics, metricsRow
from SignalIO import WINDOW_LABEL
import utils


g_Logger = utils.getLogger("HVGBaseline")

g_PcaTol = 1e-10
g_PcaMaxIter = 5000
g_VarianceTarget = 0.95
g_GradTol = 1e-6
g_ArmijoFactor = 1e-4


class HvgGraph:
	'''
	Horizontal visibility graph of one series: i<j are linked iff every value strictly between them is below min(x_i, x_j)
	'''
	def __init__(self, n, edges):
		self.n = int(n)
		self.edges = sorted((int(min(i, j)), int(max(i, j))) for i, j in edges)

	def adjacency(self):
		A = np.zeros((self.n, self.n), dtype=np.uint8)
		if (len(self.edges) > 0):
			rows, cols = zip(*self.edges)
			A[rows, cols] = 1
			A[cols, rows] = 1
		return A

	def __str__(self):
		return "HvgGraph(n={}, edges={})".format(self.n, len(self.edges))


class FeatureMatrix:
	'''
	Rows are electrodes. labels is the SOZ flag of each row
	'''
	def __init__(self, values, labels, rowNames=None):
		values = np.array(values, dtype=np.float64)
		if (values.ndim != 2):
			raise FeatureError("Feature matrix must be 2-D, got shape {}".format(values.shape))
		labels = np.array(labels, dtype=bool).reshape(-1)
		if (labels.shape[0] != values.shape[0]):
			raise FeatureError("{} labels for {} rows".format(labels.shape[0], values.shape[0]))
		self.values = values
		self.labels = labels
		self.rowNames = list(rowNames) if (rowNames is not None) else [str(i) for i in range(values.shape[0])]

	@property
	def nRows(self):
		return self.values.shape[0]

	@property
	def nFeatures(self):
		return self.values.shape[1]

	def subset(self, rows):
		return FeatureMatrix(self.values[rows, :], self.labels[rows], [self.rowNames[i] for i in rows])

	def toDataFrame(self):
		columns = ["f{:05d}".format(k) for k in range(self.nFeatures)]
		table = pd.DataFrame(self.values, columns=columns)
		table.insert(0, "Channel", self.rowNames)
		table.insert(1, "Soz", self.labels)
		return table

	def __str__(self):
		return "FeatureMatrix(rows={}, features={}, soz={})".format(self.nRows, self.nFeatures, int(np.sum(self.labels)))


#######################
# Visibility graphs
#######################
def _checkSeries(series):
	series = np.asarray(series, dtype=np.float64).reshape(-1)
	if (series.shape[0] < 2):
		raise FeatureError("Visibility graph needs a series of length >= 2, got {}".format(series.shape[0]))
	if (not np.all(np.isfinite(series))):
		raise FeatureError("Series must be finite")
	return series


def buildHvg(series):
	'''
	Linear-time stack construction. Equal heights block visibility
	'''
	series = _checkSeries(series)
	edges = []
	stack = []
	for j, height in enumerate(series):
		while (stack and (series[stack[-1]] < height)):
			edges.append((stack.pop(), j))
		if (stack):
			edges.append((stack[-1], j))
			if (series[stack[-1]] == height):
				stack.pop()
		stack.append(j)
	return HvgGraph(series.shape[0], edges)


def bruteForceHvg(series):
	'''
	Pairwise criterion check, O(n^2) pairs. Reference for buildHvg
	'''
	series = _checkSeries(series)
	n = series.shape[0]
	edges = []
	for i in range(n - 1):
		for j in range(i + 1, n):
			if (np.all(series[i + 1:j] < min(series[i], series[j]))):
				edges.append((i, j))
	return HvgGraph(n, edges)


def defaultFeatureWindows(windowLabels):
	'''
	Last pre-onset, onset and first post-onset window
	'''
	labels = [WINDOW_LABEL(label) for label in windowLabels]
	if (WINDOW_LABEL.ONSET not in labels):
		raise FeatureError("No Onset window to anchor the feature windows")
	onset = labels.index(WINDOW_LABEL.ONSET)
	if ((onset < 1) or (onset + 1 >= len(labels))):
		raise FeatureError("Feature windows need one window on each side of the onset window")
	return [onset - 1, onset, onset + 1]


def hvgFeatures(windowedRecording, selected=None, showProgress=False):
	'''
	Mean of the three HVG adjacencies of each electrode, flattened row-major to the strict upper triangle
	'''
	if (selected is None):
		selected = defaultFeatureWindows(windowedRecording.windowLabels)
	selected = [int(m) for m in selected]
	if (len(selected) != 3):
		raise FeatureError("Exactly 3 feature windows are required, got {}".format(selected))
	if (any((m < 0) or (m >= windowedRecording.nWindows) for m in selected)):
		raise FeatureError("Feature windows {} out of range for {} windows".format(selected, windowedRecording.nWindows))
	windows = [windowedRecording.windows[m] for m in selected]
	lengths = set(window.nSamples for window in windows)
	if (len(lengths) != 1):
		raise FeatureError("Feature windows have unequal lengths {}".format(sorted(lengths)))

	length = lengths.pop()
	rows, cols = np.triu_indices(length, k=1)
	nChannels = windows[0].nNodes
	values = np.zeros((nChannels, rows.shape[0]))
	for channel in tqdm(range(nChannels), ascii=False, ncols=80, disable=not showProgress):
		meanAdjacency = np.zeros((length, length))
		for window in windows:
			meanAdjacency += buildHvg(window.values[channel, :]).adjacency()
		values[channel, :] = (meanAdjacency/3.0)[rows, cols]

	return FeatureMatrix(values, windowedRecording.sozLabels, windowedRecording.channelNames)


#######################
# PCA
#######################
class PCAModel:
	def __init__(self, mean, components, explainedVariance, totalVariance):
		self.mean = mean
		self.components = components
		self.explainedVariance = np.array(explainedVariance)
		self.totalVariance = float(totalVariance)

	@property
	def nComponents(self):
		return self.components.shape[0]

	def explainedVarianceRatio(self):
		return self.explainedVariance/self.totalVariance

	def transform(self, values):
		return (np.asarray(values, dtype=np.float64) - self.mean).dot(self.components.T)

	def inverseTransform(self, scores):
		return np.asarray(scores).dot(self.components) + self.mean

	def __str__(self):
		return "PCAModel(components={}, explained={:.4f})".format(self.nComponents, float(np.sum(self.explainedVarianceRatio())))


def pcaFit(values, nComponents=None, varianceTarget=g_VarianceTarget, tol=g_PcaTol, maxIter=g_PcaMaxIter):
	'''
	Power iteration with deflation on the covariance operator, applied matrix-free through the centered data.
	Each new direction is kept orthogonal to the ones already found. With nComponents=None, components are added
	until varianceTarget of the total variance is explained.
	'''
	values = np.asarray(values, dtype=np.float64)
	nRows, nCols = values.shape
	if (nRows < 2):
		raise FeatureError("PCA needs at least 2 rows")
	maxComponents = min(nRows - 1, nCols)
	if ((nComponents is not None) and ((nComponents < 1) or (nComponents > maxComponents))):
		raise FeatureError("nComponents={} must be in [1, {}]".format(nComponents, maxComponents))

	mean = values.mean(axis=0)
	centered = values - mean
	totalVariance = float(np.sum(centered**2))/(nRows - 1)
	if (totalVariance <= 1e-14*max(1.0, float(np.max(np.abs(values))))**2):
		raise FeatureError("Input has zero variance")

	def covariance(v):
		return centered.T.dot(centered.dot(v))/(nRows - 1)

	rng = np.random.default_rng(0)
	components = []
	variances = []
	target = maxComponents if (nComponents is None) else nComponents
	for k in range(target):
		basis = np.array(components) if (len(components) > 0) else np.zeros((0, nCols))
		v = covariance(rng.standard_normal(nCols))
		v -= basis.T.dot(basis.dot(v))
		norm = np.linalg.norm(v)
		if (norm <= 1e-12*totalVariance):
			break
		v /= norm

		for iteration in range(maxIter):
			u = covariance(v)
			u -= basis.T.dot(basis.dot(u))
			norm = np.linalg.norm(u)
			if (norm <= 1e-14*totalVariance):
				break
			u /= norm
			change = np.linalg.norm(u - v)
			v = u
			if (change <= tol):
				break

		#Final re-orthogonalization keeps the basis orthonormal to rounding
		v -= basis.T.dot(basis.dot(v))
		v /= np.linalg.norm(v)
		if (v[np.argmax(np.abs(v))] < 0):
			v = -v
		variance = float(np.sum(centered.dot(v)**2))/(nRows - 1)
		if (variance <= 1e-14*totalVariance):
			break
		components.append(v)
		variances.append(variance)
		if ((nComponents is None) and (np.sum(variances) >= varianceTarget*totalVariance)):
			break

	if ((nComponents is not None) and (len(components) < nComponents)):
		raise FeatureError("Only {} components have nonzero variance, {} requested".format(len(components), nComponents))

	#Sort by explained variance, deflation may return close eigenvalues out of order
	order = np.argsort(-np.array(variances), kind="mergesort")
	components = np.array(components)[order, :]
	variances = np.array(variances)[order]
	return PCAModel(mean, components, variances, totalVariance)


def pcaFitTransform(features, nComponents=None, varianceTarget=g_VarianceTarget):
	'''
	Returns (FeatureMatrix of component scores, PCAModel)
	'''
	model = pcaFit(features.values, nComponents=nComponents, varianceTarget=varianceTarget)
	return FeatureMatrix(model.transform(features.values), features.labels, features.rowNames), model


#######################
# Logistic regression
#######################
class LogisticModel:
	def __init__(self, coefficients, intercept, converged, iterations, lossTrace, l2):
		self.coefficients = np.array(coefficients, dtype=np.float64)
		self.intercept = float(intercept)
		self.converged = bool(converged)
		self.iterations = int(iterations)
		self.lossTrace = list(lossTrace)
		self.l2 = float(l2)

	def toDict(self):
		return {
			"Coefficients": self.coefficients.tolist(),
			"Intercept": self.intercept,
			"L2": self.l2,
			"Converged": self.converged,
			"Iterations": self.iterations,
			"FinalLoss": self.lossTrace[-1] if (len(self.lossTrace) > 0) else None
		}

	def __str__(self):
		return "LogisticModel(features={}, converged={}, iterations={})".format(self.coefficients.shape[0], self.converged, self.iterations)


def balancedSampleWeights(labels):
	'''
	Inverse class frequency, scaled so the weights sum to the number of samples
	'''
	labels = np.asarray(labels, dtype=bool)
	nSamples = labels.shape[0]
	nPositive = int(np.sum(labels))
	nNegative = nSamples - nPositive
	if ((nPositive == 0) or (nNegative == 0)):
		raise ModelTrainingError("Training labels contain a single class ({} SOZ of {})".format(nPositive, nSamples))
	return np.where(labels, nSamples/(2.0*nPositive), nSamples/(2.0*nNegative))


def logisticObjective(parameters, values, labels, sampleWeights, l2):
	'''
	Weighted mean log-loss plus (l2/2)||coefficients||^2. parameters = [coefficients..., intercept].
	Returns (loss, gradient)
	'''
	design = np.hstack([values, np.ones((values.shape[0], 1))])
	z = design.dot(parameters)
	y = np.asarray(labels, dtype=np.float64)
	totalWeight = float(np.sum(sampleWeights))
	coefficients = parameters[:-1]

	loss = float(np.sum(sampleWeights*(np.logaddexp(0.0, z) - y*z)))/totalWeight + 0.5*l2*float(np.dot(coefficients, coefficients))
	gradient = design.T.dot(sampleWeights*(expit(z) - y))/totalWeight
	gradient[:-1] += l2*coefficients
	return loss, gradient


def logregTrain(features, l2=1.0, maxIter=100, gradTol=g_GradTol):
	'''
	Newton's method with Armijo backtracking on the class-balanced loss. The intercept is not penalized.
	Non-convergence is logged and the last (best) model is returned.
	'''
	if (l2 < 0):
		raise ModelTrainingError("l2 must be nonnegative, got {}".format(l2))
	values = np.asarray(features.values, dtype=np.float64)
	labels = features.labels
	sampleWeights = balancedSampleWeights(labels)
	design = np.hstack([values, np.ones((values.shape[0], 1))])
	totalWeight = float(np.sum(sampleWeights))
	penalty = np.full(design.shape[1], l2)
	penalty[-1] = 0.0

	parameters = np.zeros(design.shape[1])
	loss, gradient = logisticObjective(parameters, values, labels, sampleWeights, l2)
	lossTrace = [loss]
	converged = False
	iteration = 0
	while (iteration < maxIter):
		if (np.linalg.norm(gradient) <= gradTol):
			converged = True
			break
		iteration += 1

		p = expit(design.dot(parameters))
		curvature = sampleWeights*p*(1.0 - p)/totalWeight
		hessian = design.T.dot(design*curvature[:, None]) + np.diag(penalty)
		hessian += 1e-12*np.eye(hessian.shape[0])
		try:
			direction = -np.linalg.solve(hessian, gradient)
		except np.linalg.LinAlgError:
			direction = -gradient
		slope = float(np.dot(gradient, direction))
		if (slope >= 0):
			direction = -gradient
			slope = -float(np.dot(gradient, gradient))

		step = 1.0
		accepted = False
		for backtrack in range(60):
			candidate = parameters + step*direction
			candidateLoss, candidateGradient = logisticObjective(candidate, values, labels, sampleWeights, l2)
			if (candidateLoss <= loss + g_ArmijoFactor*step*slope):
				accepted = True
				break
			step *= 0.5
		if (not accepted):
			break

		parameters, loss, gradient = candidate, candidateLoss, candidateGradient
		lossTrace.append(loss)

	if ((not converged) and (np.linalg.norm(gradient) <= gradTol)):
		converged = True
	if (not converged):
		g_Logger.warning("Logistic regression stopped at gradient norm {:.3g} after {} iterations".format(np.linalg.norm(gradient), iteration))

	return LogisticModel(parameters[:-1], parameters[-1], converged, iteration, lossTrace, l2)


def logregPredict(model, features):
	'''
	SOZ probabilities in (0, 1)
	'''
	values = features.values if (isinstance(features, FeatureMatrix)) else np.asarray(features, dtype=np.float64)
	if (values.shape[1] != model.coefficients.shape[0]):
		raise FeatureError("Model expects {} features, got {}".format(model.coefficients.shape[0], values.shape[1]))
	probabilities = expit(values.dot(model.coefficients) + model.intercept)
	return np.clip(probabilities, 1e-15, 1.0 - 1e-15)


#######################
# Evaluation
#######################
class CrossValidationResult:
	def __init__(self, foldPredictions, foldMetrics, recordingId):
		self.foldPredictions = foldPredictions
		self.foldMetrics = foldMetrics
		self.recordingId = recordingId

	def metricsRow(self, method="HVG"):
		return metricsRow(self.recordingId, method, self.foldMetrics)

	def totalAccuracy(self):
		return float(np.nanmean([metrics.totalAccuracy for metrics in self.foldMetrics]))


def crossValidate(features, nFolds=5, nComponents=None, varianceTarget=g_VarianceTarget, l2=1.0, maxIter=100, seed=0, recordingId="recording"):
	'''
	Stratified k-fold CV over electrodes. PCA and the classifier are fitted on the training fold only
	'''
	nPositive = int(np.sum(features.labels))
	nNegative = features.nRows - nPositive
	folds = min(int(nFolds), nPositive, nNegative)
	if (folds < 2):
		raise ModelTrainingError("{}: stratified CV needs >= 2 electrodes per class, got {} SOZ and {} non-SOZ".format(recordingId, nPositive, nNegative))
	if (folds < nFolds):
		g_Logger.warning("{}: reducing CV from {} to {} folds, the minority class is too small".format(recordingId, nFolds, folds))

	splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
	predictionRows = []
	foldMetrics = []
	for fold, (trainRows, testRows) in enumerate(splitter.split(features.values, features.labels)):
		train = features.subset(trainRows)
		test = features.subset(testRows)
		foldComponents = None if (nComponents is None) else min(int(nComponents), train.nRows - 1, train.nFeatures)
		try:
			trainScores, pca = pcaFitTransform(train, nComponents=foldComponents, varianceTarget=varianceTarget)
		except FeatureError as e:
			raise ModelTrainingError("{} fold {}: {}".format(recordingId, fold, e))
		model = logregTrain(trainScores, l2=l2, maxIter=maxIter)
		probabilities = logregPredict(model, pca.transform(test.values))
		predictions = probabilities >= 0.5
		foldMetrics.append(perClassMetrics(predictions, test.labels))

		for name, label, probability, predicted in zip(test.rowNames, test.labels, probabilities, predictions):
			predictionRows.append({"Fold": fold, "Channel": name, "TrueSoz": bool(label), "Probability": float(probability), "PredictedSoz": bool(predicted)})

	foldPredictions = pd.DataFrame(predictionRows, columns=["Fold", "Channel", "TrueSoz", "Probability", "PredictedSoz"])
	return CrossValidationResult(foldPredictions, foldMetrics, recordingId)


def fitFullModel(features, nComponents=None, varianceTarget=g_VarianceTarget, l2=1.0, maxIter=100):
	'''
	PCA and classifier fitted on every electrode, for export
	'''
	if (nComponents is not None):
		nComponents = min(int(nComponents), features.nRows - 1, features.nFeatures)
	scores, pca = pcaFitTransform(features, nComponents=nComponents, varianceTarget=varianceTarget)
	model = logregTrain(scores, l2=l2, maxIter=maxIter)
	return pca, model


def permutationNull(features, nPermutations=100, seed=0, showProgress=False, **cvKwargs):
	'''
	Mean CV total accuracy under randomly permuted labels. Returns (observed, nullAccuracies, pValue)
	'''
	observed = crossValidate(features, seed=seed, **cvKwargs).totalAccuracy()
	rng = np.random.default_rng(seed)
	nullAccuracies = []
	for k in tqdm(range(int(nPermutations)), ascii=False, ncols=80, disable=not showProgress):
		permuted = FeatureMatrix(features.values, rng.permutation(features.labels), features.rowNames)
		try:
			nullAccuracies.append(crossValidate(permuted, seed=seed, **cvKwargs).totalAccuracy())
		except PipelineError as e:
			g_Logger.warning("Permutation {} skipped: {}".format(k, e))

	nullAccuracies = np.array(nullAccuracies)
	pValue = (1.0 + float(np.sum(nullAccuracies >= observed)))/(1.0 + nullAccuracies.shape[0])
	return observed, nullAccuracies, pValue
