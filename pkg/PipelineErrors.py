'''
Error classes raised by the SpaTeoGL toolkit.

Every error is a ValueError subclass that carries an ERROR_CLASS. The ERROR_CLASS value is the exit code
used by runSpaTeoGL.py when the error reaches the command line.
'''
from enum import Enum, unique


#Enum for error classes. Values are process exit codes
@unique
class ERROR_CLASS(Enum):
	#########################
	# Generic
	#########################
	INTERNAL = 1

	#########################
	# Inputs
	#########################
	IO = 10
	CONFIG = 11

	#########################
	# Validation
	#########################
	VALIDATION = 20
	RESAMPLE_UNSUPPORTED = 21

	#########################
	# Optimization
	#########################
	SOLVER = 30
	DEGENERATE = 31

	#########################
	# Evaluation
	#########################
	TRAINING = 40
	ANALYSIS = 41
	INSUFFICIENT_PAIRS = 42


class PipelineError(ValueError):
	'''
	Base class for all toolkit errors
	'''
	errorClass = ERROR_CLASS.INTERNAL

	def __init__(self, message, errorClass=None):
		super().__init__(message)
		if (errorClass):
			self.errorClass = errorClass

	@property
	def exitCode(self):
		return self.errorClass.value

	def oneLine(self):
		'''
		Single machine-parsable line printed by the command line front end
		'''
		message = str(self).replace("\n", " ")
		return "ERROR {}: {}".format(self.errorClass.name, message)


class InputOutputError(PipelineError):
	errorClass = ERROR_CLASS.IO

class ConfigError(PipelineError):
	errorClass = ERROR_CLASS.CONFIG

class InvalidWeightsError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class InvalidLaplacianError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class DimensionMismatchError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class MalformedRecordingError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class WindowingError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class FeatureError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class InvalidSynthSpecError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class InvalidTemporalGraphError(PipelineError):
	errorClass = ERROR_CLASS.VALIDATION

class ResampleUnsupportedError(PipelineError):
	errorClass = ERROR_CLASS.RESAMPLE_UNSUPPORTED

class InvalidProblemError(PipelineError):
	errorClass = ERROR_CLASS.SOLVER

class SolverBlockError(PipelineError):
	'''
	Raised when a block subproblem fails. Carries the failing block's name
	'''
	errorClass = ERROR_CLASS.SOLVER

	def __init__(self, blockName, cause):
		super().__init__("Block {} failed: {}".format(blockName, cause))
		self.blockName = blockName
		self.cause = cause

class DegenerateTemporalError(PipelineError):
	errorClass = ERROR_CLASS.DEGENERATE

class ModelTrainingError(PipelineError):
	errorClass = ERROR_CLASS.TRAINING

class AnalysisError(PipelineError):
	errorClass = ERROR_CLASS.ANALYSIS

class InsufficientPairsError(PipelineError):
	errorClass = ERROR_CLASS.INSUFFICIENT_PAIRS
