"""ラボ共通の例外"""


class SlelabError(ValueError):
    """全サービス例外の基底（HTTP 400 / CLI exit 2 に対応）"""


class InvalidParameterError(SlelabError):
    pass


class OutOfDomainError(SlelabError):
    pass


class InvalidStartError(SlelabError):
    pass


class LoewnerInstabilityError(SlelabError):
    """適応刻みを使い切っても |g - W| が吸収判定に入らない"""

    def __init__(self, message: str, t: float | None = None, z: complex | None = None):
        super().__init__(message)
        self.t = t
        self.z = z


class InsufficientScalesError(SlelabError):
    """フィットに使えるスケールが3未満"""


def require_positive(**values: float) -> None:
    for name, value in values.items():
        if value is None or not value > 0:
            raise InvalidParameterError(f"{name} must be positive, got {value!r}")
