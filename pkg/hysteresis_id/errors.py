class ConfigurationError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class IntegrationError(NumericalError):
    def __init__(self, message: str, step: int, time_s: float):
        super().__init__(f"{message} (step {step}, t = {time_s:.6f} s)")
        self.step = step
        self.time_s = time_s
