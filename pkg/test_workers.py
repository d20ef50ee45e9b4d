import threading

import workers
from errors import TrainingAborted
from workers import TrainingWorker, WorkerBase


def test_protocol_lines_drive_callbacks():
    progress, states, logs, finished = [], [], [], []

    def operation(n, worker=None):
        workers.report(worker, f"TOTAL:{n}")
        workers.report(worker, "STATE:TRAIN")
        for i in range(n):
            workers.report(worker, f"PROGRESS:{i + 1}")
        workers.report(worker, "plain log line")
        return "done"

    worker = TrainingWorker(operation, 3, on_progress=lambda c, t: progress.append((c, t)),
                            on_state=states.append, on_log=logs.append,
                            on_finished=lambda ok, msg: finished.append((ok, msg)))
    worker.start()
    assert worker.wait() == (True, "Training completed successfully")
    assert worker.result == "done"
    assert progress == [(0, 3), (1, 3), (2, 3), (3, 3)]
    assert states == ["Training"]
    assert logs == ["plain log line"]
    assert finished == [(True, "Training completed successfully")]
    assert worker.progress == (3, 3)


def test_malformed_protocol_line_is_ignored():
    worker = WorkerBase(lambda worker=None: None)
    assert worker.parse_output_line("PROGRESS:many") is None
    assert worker.progress == (0, 0)
    assert worker.parse_output_line("STATE:CUSTOM") is None
    assert worker.parse_output_line("hello") == "hello"


def test_abort_stops_at_next_check():
    started, release = threading.Event(), threading.Event()

    def operation(worker=None):
        started.set()
        release.wait(5)
        workers.check_abort(worker)
        return "unreachable"

    worker = WorkerBase(operation)
    worker.start()
    started.wait(5)
    worker.abort()
    release.set()
    assert worker.wait(5) == (False, "Operation aborted")
    assert isinstance(worker.error, TrainingAborted)
    assert worker.result is None


def test_errors_are_captured():
    def operation(worker=None):
        raise ValueError("boom")

    worker = WorkerBase(operation)
    worker.start()
    assert worker.wait(5) == (False, "boom")
    assert isinstance(worker.error, ValueError)


def test_helpers_without_worker():
    workers.report(None, "PROGRESS:1")
    workers.check_abort(None)
