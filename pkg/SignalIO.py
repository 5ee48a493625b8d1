'''
Recording ingestion, preprocessing and onset-aligned windowing.

Formats
	-CSV recording: first row is the channel names, each following row is one sample across channels (microvolts)
	-Binary recording: header "<4sHIQd" (magic "STGL", version, n_channels, n_samples, sample_rate), then
	 row-major little-endian float64 samples, one row per time sample
	-Annotation sidecar (JSON): OnsetSample, SozChannels, BadChannels, SampleRate (override), ChannelNames, RecordingId

Preprocessing chain: IIR notch, 4th order Butterworth bandpass (both forward-backward), then integer-factor decimation
behind an anti-alias lowpass.
'''
import os
import struct
from enum import Enum, unique

import numpy as np
import pandas as pd
from scipy import signal

from PipelineErrors import InputOutputError, ConfigError, MalformedRecordingError, ResampleUnsupportedError, WindowingError
from GraphClasses import SignalMatrix
import utils


g_Logger = utils.getLogger("SignalIO")

g_BinaryMagic = b"STGL"
g_BinaryVersion = 1
g_BinaryHeader = struct.Struct("<4sHIQd")

g_NotchQuality = 30.0
g_BandpassOrder = 4
g_AntiAliasOrder = 8
g_AntiAliasFraction = 0.45
g_PadSeconds = 2.0


@unique
class RECORDING_FORMAT(Enum):
	CSV = "csv"
	BINARY = "binary"


@unique
class WINDOW_LABEL(Enum):
	PRE_ONSET = "PreOnset"
	ONSET = "Onset"
	POST_ONSET = "PostOnset"


class Recording:
	'''
	Multichannel recording with its annotations. samples is n_channels x n_samples
	'''
	def __init__(self, channelNames, sampleRate, samples, onsetSample, sozLabels=None, badChannels=None, recordingId=None):
		samples = np.array(samples, dtype=np.float64)
		channelNames = [str(name) for name in channelNames]
		if (samples.ndim != 2):
			raise MalformedRecordingError("Samples must be a 2-D channels x samples matrix, got shape {}".format(samples.shape))
		if (samples.shape[0] != len(channelNames)):
			raise MalformedRecordingError("{} channel names for {} channels".format(len(channelNames), samples.shape[0]))
		if (len(set(channelNames)) != len(channelNames)):
			raise MalformedRecordingError("Channel names are not unique")
		if (not np.all(np.isfinite(samples))):
			raise MalformedRecordingError("Recording contains non-finite samples")
		if ((not np.isfinite(sampleRate)) or (sampleRate <= 0)):
			raise MalformedRecordingError("Sample rate must be positive, got {}".format(sampleRate))
		if ((int(onsetSample) < 0) or (int(onsetSample) >= samples.shape[1])):
			raise MalformedRecordingError("Onset sample {} outside [0, {})".format(onsetSample, samples.shape[1]))

		if (sozLabels is None):
			sozLabels = np.zeros(len(channelNames), dtype=bool)
		sozLabels = np.array(sozLabels, dtype=bool).reshape(-1)
		if (sozLabels.shape[0] != len(channelNames)):
			raise MalformedRecordingError("{} SOZ labels for {} channels".format(sozLabels.shape[0], len(channelNames)))

		samples.setflags(write=False)
		sozLabels.setflags(write=False)
		self.channelNames = channelNames
		self.sampleRate = float(sampleRate)
		self.samples = samples
		self.onsetSample = int(onsetSample)
		self.sozLabels = sozLabels
		self.badChannels = list(badChannels) if (badChannels) else []
		self.recordingId = recordingId if (recordingId) else "recording"
		self.hash = utils.arrayHash(samples)

	@property
	def nChannels(self):
		return self.samples.shape[0]

	@property
	def nSamples(self):
		return self.samples.shape[1]

	def sozChannels(self):
		return [name for name, isSoz in zip(self.channelNames, self.sozLabels) if isSoz]

	def copyWith(self, samples=None, sampleRate=None, onsetSample=None, channelNames=None, sozLabels=None):
		return Recording(
			self.channelNames if (channelNames is None) else channelNames,
			self.sampleRate if (sampleRate is None) else sampleRate,
			self.samples if (samples is None) else samples,
			self.onsetSample if (onsetSample is None) else onsetSample,
			sozLabels=self.sozLabels if (sozLabels is None) else sozLabels,
			badChannels=self.badChannels,
			recordingId=self.recordingId)

	def dropChannels(self, names):
		'''
		Returns a copy without the named channels. Unknown names raise MalformedRecordingError
		'''
		unknown = [name for name in names if name not in self.channelNames]
		if (len(unknown) > 0):
			raise MalformedRecordingError("Unknown channels {} in bad-channel list".format(unknown))
		keep = [i for i, name in enumerate(self.channelNames) if name not in names]
		if (len(keep) == 0):
			raise MalformedRecordingError("Every channel is listed as bad")

		dropped = Recording([self.channelNames[i] for i in keep], self.sampleRate, self.samples[keep, :], self.onsetSample, sozLabels=self.sozLabels[keep], recordingId=self.recordingId)
		dropped.badChannels = self.badChannels + [name for name in names if name not in self.badChannels]
		return dropped

	def permuted(self, permutation):
		return Recording([self.channelNames[i] for i in permutation], self.sampleRate, self.samples[permutation, :], self.onsetSample, sozLabels=self.sozLabels[permutation], badChannels=self.badChannels, recordingId=self.recordingId)

	def __str__(self):
		return "Recording_{}(id={}, channels={}, samples={}, rate={}, onset={})".format(self.hash, self.recordingId, self.nChannels, self.nSamples, self.sampleRate, self.onsetSample)

	def __repr__(self):
		return str(self)


class WindowedRecording:
	'''
	Onset-aligned windows of one recording. windowStarts are sample indices in the source recording
	'''
	def __init__(self, windows, windowLabels, windowLengthMs, overlapFraction, windowStarts, channelNames, sozLabels, recordingId="recording"):
		if (len(windows) != len(windowLabels)):
			raise WindowingError("{} windows but {} labels".format(len(windows), len(windowLabels)))
		self.windows = list(windows)
		self.windowLabels = [WINDOW_LABEL(label) for label in windowLabels]
		self.windowLengthMs = float(windowLengthMs)
		self.overlapFraction = float(overlapFraction)
		self.windowStarts = list(windowStarts)
		self.channelNames = list(channelNames)
		self.sozLabels = np.array(sozLabels, dtype=bool)
		self.recordingId = recordingId

	@property
	def nWindows(self):
		return len(self.windows)

	def windowLength(self):
		return self.windows[0].nSamples

	def nPre(self):
		return self.windowLabels.count(WINDOW_LABEL.PRE_ONSET)

	def __str__(self):
		return "WindowedRecording(id={}, windows={}, labels={})".format(self.recordingId, self.nWindows, [label.value for label in self.windowLabels])


#######################
# Load and write
#######################
def inferFormat(path):
	extension = os.path.splitext(path)[1].lower()
	if (extension == ".csv"):
		return RECORDING_FORMAT.CSV
	if (extension in (".bin", ".stgl")):
		return RECORDING_FORMAT.BINARY
	raise InputOutputError("Cannot infer recording format from \"{}\". Use .csv, .bin or .stgl".format(path))


def sidecarPathFor(path):
	return os.path.splitext(path)[0] + ".json"


def _readCsvSamples(path):
	try:
		raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, encoding="utf-8")
	except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
		raise MalformedRecordingError("Could not parse \"{}\": {}".format(path, e))

	channelNames = [str(name).strip() for name in raw.iloc[0].tolist()]
	if (any(len(name) == 0 for name in channelNames)):
		raise MalformedRecordingError("\"{}\": empty channel name in header".format(path))
	try:
		values = raw.iloc[1:].to_numpy().astype(np.float64)
	except ValueError as e:
		raise MalformedRecordingError("\"{}\": non-numeric or missing sample ({})".format(path, e))
	if (values.shape[0] == 0):
		raise MalformedRecordingError("\"{}\" has no samples".format(path))
	return channelNames, values.T, None


def _readBinarySamples(path):
	with open(path, "rb") as file:
		payload = file.read()
	if (len(payload) < g_BinaryHeader.size):
		raise MalformedRecordingError("\"{}\": truncated header".format(path))

	magic, version, nChannels, nSamples, sampleRate = g_BinaryHeader.unpack_from(payload, 0)
	if (magic != g_BinaryMagic):
		raise MalformedRecordingError("\"{}\": bad magic {}".format(path, magic))
	if (version != g_BinaryVersion):
		raise MalformedRecordingError("\"{}\": unsupported version {}".format(path, version))
	expectedBytes = nChannels*nSamples*8
	if (len(payload) - g_BinaryHeader.size != expectedBytes):
		raise MalformedRecordingError("\"{}\": header declares {} x {} samples but payload holds {} bytes".format(path, nChannels, nSamples, len(payload) - g_BinaryHeader.size))

	values = np.frombuffer(payload, dtype="<f8", offset=g_BinaryHeader.size).reshape(nSamples, nChannels)
	return None, values.T.astype(np.float64), sampleRate


def loadRecording(path, recordingFormat=None, sidecarPath=None):
	'''
	Loads a recording and its annotation sidecar, then drops the bad channels the sidecar lists
	'''
	if (not os.path.exists(path)):
		raise InputOutputError("\"{}\" does not exist".format(path))
	recordingFormat = inferFormat(path) if (recordingFormat is None) else RECORDING_FORMAT(recordingFormat)
	if (sidecarPath is None):
		sidecarPath = sidecarPathFor(path)
	annotations = utils.loadJsonFile(sidecarPath, errorType=InputOutputError)

	if (recordingFormat == RECORDING_FORMAT.CSV):
		channelNames, samples, sampleRate = _readCsvSamples(path)
	else:
		channelNames, samples, sampleRate = _readBinarySamples(path)
		if ("ChannelNames" not in annotations):
			raise MalformedRecordingError("Binary recording \"{}\" needs ChannelNames in its sidecar".format(path))
		channelNames = [str(name) for name in annotations["ChannelNames"]]
		if (len(channelNames) != samples.shape[0]):
			raise MalformedRecordingError("Sidecar lists {} channel names, \"{}\" has {} channels".format(len(channelNames), path, samples.shape[0]))

	sampleRate = annotations.get("SampleRate", sampleRate)
	if (sampleRate is None):
		raise MalformedRecordingError("No sample rate for \"{}\": set SampleRate in the sidecar".format(path))
	if ("OnsetSample" not in annotations):
		raise MalformedRecordingError("Sidecar \"{}\" has no OnsetSample".format(sidecarPath))

	sozChannels = [str(name) for name in annotations.get("SozChannels", [])]
	unknownSoz = [name for name in sozChannels if name not in channelNames]
	if (len(unknownSoz) > 0):
		raise MalformedRecordingError("Unknown channels {} in SOZ list".format(unknownSoz))
	sozLabels = [name in sozChannels for name in channelNames]

	recordingId = annotations.get("RecordingId", os.path.splitext(os.path.basename(path))[0])
	recording = Recording(channelNames, float(sampleRate), samples, int(annotations["OnsetSample"]), sozLabels=sozLabels, recordingId=recordingId)

	badChannels = [str(name) for name in annotations.get("BadChannels", [])]
	if (len(badChannels) > 0):
		recording = recording.dropChannels(badChannels)
		g_Logger.info("{}: dropped bad channels {}".format(recordingId, badChannels))

	g_Logger.debug("Loaded {}".format(recording))
	return recording


def writeRecording(recording, path, recordingFormat=None, sidecarPath=None, badChannels=None):
	'''
	Writes a recording in either format plus its annotation sidecar
	'''
	recordingFormat = inferFormat(path) if (recordingFormat is None) else RECORDING_FORMAT(recordingFormat)
	if (sidecarPath is None):
		sidecarPath = sidecarPathFor(path)
	utils.createFolderPath(path)

	if (recordingFormat == RECORDING_FORMAT.CSV):
		utils.writeCsv(pd.DataFrame(recording.samples.T, columns=recording.channelNames), path)
	else:
		header = g_BinaryHeader.pack(g_BinaryMagic, g_BinaryVersion, recording.nChannels, recording.nSamples, recording.sampleRate)
		try:
			with open(path, "wb") as file:
				file.write(header)
				file.write(np.ascontiguousarray(recording.samples.T, dtype="<f8").tobytes())
		except OSError as e:
			raise InputOutputError("Could not write \"{}\": {}".format(path, e))

	annotations = {
		"RecordingId": recording.recordingId,
		"SampleRate": recording.sampleRate,
		"OnsetSample": recording.onsetSample,
		"SozChannels": recording.sozChannels(),
		"BadChannels": list(badChannels) if (badChannels) else [],
		"ChannelNames": recording.channelNames
	}
	utils.dictToJsonFile(annotations, sidecarPath)


#######################
# Preprocessing
#######################
def _padLength(nSamples, sampleRate):
	return max(0, min(nSamples - 1, int(round(g_PadSeconds*sampleRate))))


def decimationFactor(sampleRate, targetRate):
	'''
	Integer factor sampleRate/targetRate. Anything else raises ResampleUnsupportedError
	'''
	if ((targetRate is None) or (targetRate <= 0)):
		raise ConfigError("Target rate must be positive, got {}".format(targetRate))
	if (targetRate > sampleRate):
		raise ResampleUnsupportedError("Target rate {} Hz exceeds the sample rate {} Hz".format(targetRate, sampleRate))
	ratio = sampleRate/targetRate
	factor = int(round(ratio))
	if (abs(ratio - factor) > 1e-9*ratio):
		raise ResampleUnsupportedError("Sample rate {} Hz is not an integer multiple of target rate {} Hz".format(sampleRate, targetRate))
	return factor


def preprocess(recording, notchHz=60.0, band=(0.5, 100.0), targetRate=250.0):
	'''
	Notch, bandpass and decimate every channel. Filters run forward-backward so windows keep their timing
	'''
	low, high = float(band[0]), float(band[1])
	nyquist = recording.sampleRate/2.0
	if ((low <= 0) or (high <= low)):
		raise ConfigError("Band must satisfy 0 < low < high, got ({}, {})".format(low, high))
	if (high >= nyquist):
		raise ConfigError("Band edge {} Hz is not below the Nyquist frequency {} Hz".format(high, nyquist))
	if (notchHz and ((notchHz < low) or (notchHz > high))):
		raise ConfigError("Notch {} Hz lies outside the band ({}, {})".format(notchHz, low, high))
	factor = decimationFactor(recording.sampleRate, targetRate if (targetRate) else recording.sampleRate)

	samples = np.array(recording.samples)
	padlen = _padLength(recording.nSamples, recording.sampleRate)

	if (notchHz):
		b, a = signal.iirnotch(notchHz, g_NotchQuality, fs=recording.sampleRate)
		samples = signal.filtfilt(b, a, samples, axis=1, padlen=padlen)

	sos = signal.butter(g_BandpassOrder, [low, high], btype="bandpass", output="sos", fs=recording.sampleRate)
	samples = signal.sosfiltfilt(sos, samples, axis=1, padlen=padlen)

	sampleRate = recording.sampleRate
	onsetSample = recording.onsetSample
	if (factor > 1):
		newRate = recording.sampleRate/factor
		antiAlias = signal.butter(g_AntiAliasOrder, g_AntiAliasFraction*newRate, btype="lowpass", output="sos", fs=recording.sampleRate)
		samples = signal.sosfiltfilt(antiAlias, samples, axis=1, padlen=padlen)
		samples = samples[:, ::factor]
		sampleRate = newRate
		onsetSample = recording.onsetSample//factor

	g_Logger.debug("{}: notch={} band=({}, {}) rate {} -> {}".format(recording.recordingId, notchHz, low, high, recording.sampleRate, sampleRate))
	return recording.copyWith(samples=np.ascontiguousarray(samples), sampleRate=sampleRate, onsetSample=onsetSample)


#######################
# Windowing
#######################
def windowGeometry(sampleRate, windowMs, overlapFraction):
	'''
	Returns (windowLength, stride) in samples
	'''
	if ((overlapFraction < 0) or (overlapFraction >= 1)):
		raise WindowingError("Overlap fraction must be in [0, 1), got {}".format(overlapFraction))
	windowLength = int(round(windowMs*sampleRate/1000.0))
	if (windowLength < 2):
		raise WindowingError("A {} ms window at {} Hz holds fewer than 2 samples".format(windowMs, sampleRate))
	stride = int(round(windowLength*(1.0 - overlapFraction)))
	if (stride < 1):
		raise WindowingError("Overlap {} leaves a stride below one sample".format(overlapFraction))
	return windowLength, stride


def makeWindows(recording, windowMs=512.0, overlapFraction=0.5, nPre=3, nPost=9):
	'''
	The Onset window starts at the onset sample. Pre-onset windows tile backward and post-onset windows tile forward
	with the same stride
	'''
	if ((nPre < 0) or (nPost < 0)):
		raise WindowingError("Window counts must be nonnegative")
	windowLength, stride = windowGeometry(recording.sampleRate, windowMs, overlapFraction)

	firstStart = recording.onsetSample - nPre*stride
	if (firstStart < 0):
		raise WindowingError("Pre-onset side is {} samples short for {} pre-onset windows".format(-firstStart, nPre))
	lastEnd = recording.onsetSample + nPost*stride + windowLength
	if (lastEnd > recording.nSamples):
		raise WindowingError("Post-onset side is {} samples short for {} post-onset windows".format(lastEnd - recording.nSamples, nPost))

	starts = [recording.onsetSample + k*stride for k in range(-nPre, nPost + 1)]
	labels = [WINDOW_LABEL.PRE_ONSET]*nPre + [WINDOW_LABEL.ONSET] + [WINDOW_LABEL.POST_ONSET]*nPost
	windows = [SignalMatrix(recording.samples[:, start:start + windowLength], recording.channelNames) for start in starts]

	return WindowedRecording(windows, labels, windowMs, overlapFraction, starts, recording.channelNames, recording.sozLabels, recordingId=recording.recordingId)


def writeWindowLabels(windowLabels, filePath):
	labels = [WINDOW_LABEL(label).value for label in windowLabels]
	utils.writeCsv(pd.DataFrame({"Window": np.arange(len(labels)), "Label": labels}), filePath)


def readWindowLabels(filePath):
	table = utils.readCsv(filePath, dtype={"Label": str})
	try:
		return [WINDOW_LABEL(label) for label in table["Label"]]
	except (KeyError, ValueError) as e:
		raise MalformedRecordingError("Bad window label file \"{}\": {}".format(filePath, e))
