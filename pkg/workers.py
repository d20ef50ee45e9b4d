import logging
import threading

from errors import TrainingAborted

logger = logging.getLogger(__name__)


class WorkerStream:
    """File-like sink: operations ``print(..., file=worker.stream)`` protocol and log lines."""

    def __init__(self, worker):
        self.worker = worker

    def write(self, text):
        for line in text.splitlines():
            if line.strip():
                self.worker._handle_log(line.strip())

    def flush(self):
        pass


class WorkerBase(threading.Thread):
    """Base class for background training / sweep threads.

    Subclasses set STATE_DESCRIPTIONS and SUCCESS_MESSAGE as class variables
    to customise per-operation state labels and the completion message.
    Callbacks run on the worker thread.
    """

    STATE_DESCRIPTIONS: dict = {}
    SUCCESS_MESSAGE: str = "Operation completed successfully"

    def __init__(self, operation, *args, on_finished=None, on_progress=None, on_state=None, on_log=None,
                 name=None):
        super().__init__(name=name, daemon=True)
        self.operation = operation
        self.args = args
        self.on_finished = on_finished
        self.on_progress = on_progress
        self.on_state = on_state
        self.on_log = on_log
        self.stream = WorkerStream(self)
        self.result = None
        self.error = None
        self.success = None
        self.message = ""
        self._abort = False
        self._total_tasks = 0
        self._current_progress = 0

    @property
    def aborted(self):
        return self._abort

    @property
    def progress(self):
        return self._current_progress, self._total_tasks

    def abort(self):
        """Request abort; the operation stops at its next check_abort()."""
        self._abort = True

    def check_abort(self):
        if self._abort:
            raise TrainingAborted("Operation aborted")

    def parse_output_line(self, line):
        """Parse TOTAL:/PROGRESS:/STATE: protocol lines; return None to suppress from log."""
        if line.startswith("TOTAL:"):
            try:
                self._total_tasks = int(line.split(":")[1])
                self._emit(self.on_progress, self._current_progress, self._total_tasks)
            except ValueError:
                logger.debug("ignoring malformed protocol line %r", line)
            return None
        elif line.startswith("PROGRESS:"):
            try:
                self._current_progress = int(line.split(":")[1])
                self._emit(self.on_progress, self._current_progress, self._total_tasks)
            except ValueError:
                logger.debug("ignoring malformed protocol line %r", line)
            return None
        elif line.startswith("STATE:"):
            state = line.split(":")[1]
            description = self.STATE_DESCRIPTIONS.get(state, state)
            self._emit(self.on_state, description)
            return None
        return line

    def run(self):
        try:
            self.result = self.operation(*self.args, worker=self)
            if self._abort:
                self._finish(False, "Operation aborted")
            else:
                self._finish(True, self.SUCCESS_MESSAGE)
        except TrainingAborted as e:
            self.error = e
            self._finish(False, "Operation aborted")
        except Exception as e:
            self.error = e
            if self._abort:
                self._finish(False, "Operation aborted")
            else:
                self._finish(False, str(e))

    def wait(self, timeout=None):
        """Join the thread and return (success, message)."""
        self.join(timeout)
        return self.success, self.message

    def _finish(self, success, message):
        self.success = success
        self.message = message
        self._emit(self.on_finished, success, message)

    def _emit(self, callback, *args):
        if callback is not None:
            callback(*args)

    def _handle_log(self, text):
        result = self.parse_output_line(text)
        if result is not None:
            if self.on_log is not None:
                self.on_log(result)
            else:
                logger.info("%s: %s", self.name, result)


class TrainingWorker(WorkerBase):
    STATE_DESCRIPTIONS = {
        "DATA": "Loading corpus",
        "TRAIN": "Training",
        "EVAL": "Evaluating",
        "SAVE": "Writing outputs",
    }
    SUCCESS_MESSAGE = "Training completed successfully"


class SweepCellWorker(WorkerBase):
    STATE_DESCRIPTIONS = TrainingWorker.STATE_DESCRIPTIONS
    SUCCESS_MESSAGE = "Sweep cell completed"


def report(worker, line):
    """Send a protocol line to ``worker`` (no-op when running without one)."""
    if worker is not None:
        print(line, file=worker.stream)


def check_abort(worker):
    if worker is not None:
        worker.check_abort()
