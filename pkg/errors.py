class CMIError(Exception):
    pass


class ConfigError(CMIError, ValueError):
    """Invalid parameter, schedule or input schema."""


class TrainingDivergedError(CMIError, RuntimeError):
    pass


class TrialFailedError(CMIError, RuntimeError):
    def __init__(self, trial, message):
        super().__init__(f"trial {trial} failed: {message}")
        self.trial = trial
        self.message = message

    def __reduce__(self):
        # Keeps the exception intact when it crosses a process pool
        return (TrialFailedError, (self.trial, self.message))
