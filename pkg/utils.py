import hashlib
import json
import logging
import os
from datetime import datetime

import numpy as np
import pandas as pd

from PipelineErrors import InputOutputError, ConfigError


#Digits written for every float in a data CSV. 17 significant digits round-trip a float64 exactly
g_CsvFloatFormat = "%.17g"

g_LogLevels = {
	"CRITICAL": logging.CRITICAL,
	"ERROR": logging.ERROR,
	"WARNING": logging.WARNING,
	"INFO": logging.INFO,
	"DEBUG": logging.DEBUG
}


def createFolderPath(filePath):
	'''
	Makes sure that all the folders in the filePath exist
	'''
	outputdir = os.path.dirname(filePath)
	if (outputdir):
		os.makedirs(outputdir, exist_ok=True)


def getLogger(name, console="WARNING", outputdir="LOGS", logFile=False, fileLevel="INFO"):
	'''
	Returns logger object.
	Console output goes to stderr. If logFile is set, a file handler writes to <outputdir>/<name>.log
	'''
	if (logFile):
		os.makedirs(outputdir, exist_ok=True)

	#Instantiate logger. Drop handlers from a previous call with the same name
	logger = logging.getLogger(name)
	logger.setLevel(logging.DEBUG)
	logger.propagate = False
	for handler in list(logger.handlers):
		logger.removeHandler(handler)
		handler.close()

	# create formatter and add it to the handlers
	formatter = logging.Formatter('%(asctime)s.%(msecs)03d\t--%(levelname)s--\t%(name)s:\t%(message)s', datefmt='%m/%d/%Y %H:%M:%S')

	# create file handler which logs even debug messages
	if (logFile):
		logPath = os.path.join(outputdir, "{}.log".format(name).replace(":", "_"))
		fh = logging.FileHandler(logPath, mode="w")
		fh.setLevel(g_LogLevels.get(str(fileLevel).upper(), logging.INFO))
		fh.setFormatter(formatter)
		logger.addHandler(fh)

	# create console handler with a higher log level
	ch = logging.StreamHandler()
	ch.setLevel(g_LogLevels.get(str(console).upper(), logging.WARNING))
	ch.setFormatter(formatter)
	logger.addHandler(ch)

	return logger


def getTimeStamp(sanitize=True):
	date_time = datetime.now()
	timeStamp = date_time.strftime("%m/%d/%Y %H:%M:%S")
	if (sanitize):
		timeStamp = timeStamp.replace("/", "_").replace(":", "_").replace(" ", "__")

	return timeStamp


def dictToJsonFile(dictionary, filePath):
	jsonStr = json.dumps(dictionary, indent=4, sort_keys=False)
	createFolderPath(filePath)

	with open(filePath, "w", encoding="utf-8", newline="\n") as file:
		file.write(jsonStr)
		file.write("\n")


def loadJsonFile(filePath, errorType=ConfigError):
	'''
	Loads a json file into a dict. Missing or unreadable files raise errorType
	'''
	if (not os.path.exists(filePath)):
		raise errorType("\"{}\" does not exist".format(filePath))

	try:
		with open(filePath, "r", encoding="utf-8") as file:
			return json.load(file)
	except Exception as e:
		raise errorType("Could not open \"{}\": {}".format(filePath, e))


def writeCsv(dataframe, filePath):
	'''
	Writes a data table with a fixed float format and line terminator so reruns are byte-identical
	'''
	createFolderPath(filePath)
	try:
		dataframe.to_csv(filePath, index=False, float_format=g_CsvFloatFormat, lineterminator="\n", encoding="utf-8")
	except OSError as e:
		raise InputOutputError("Could not write \"{}\": {}".format(filePath, e))


def readCsv(filePath, **kwargs):
	'''
	Reads a data table written by writeCsv. Floats are parsed exactly
	'''
	if (not os.path.exists(filePath)):
		raise InputOutputError("\"{}\" does not exist".format(filePath))
	return pd.read_csv(filePath, float_precision="round_trip", **kwargs)


def fileHash(filePath, length=None):
	'''
	Returns the sha256 hex digest of a file's contents
	'''
	digest = hashlib.sha256()
	with open(filePath, "rb") as file:
		for block in iter(lambda: file.read(1 << 20), b""):
			digest.update(block)
	hexDigest = digest.hexdigest()
	if (length):
		return hexDigest[:length]
	return hexDigest


def shortHash(*parts):
	'''
	Short identifying hash used in the __str__ of value objects
	'''
	hashStr = "".join([str(part) for part in parts])
	return hashlib.sha256(hashStr.encode('utf-8')).hexdigest()[:8 ]


def arrayHash(array):
	array = np.ascontiguousarray(array, dtype=np.float64)
	return hashlib.sha256(array.tobytes()).hexdigest()[:8 ]


def getSetting(settingsDict, key, default):
	'''
	Returns settingsDict[key] if present, else default
	'''
	if (settingsDict and (key in settingsDict) and (settingsDict[key] is not None)):
		return settingsDict[key]
	return default
