"""
panoptic 클러스터링 파이프라인 공통 예외 정의.

모든 예외는 SmacSegError를 상속하며, 입력값 문제는 ValueError도 함께 상속해
기존 `except ValueError` 처리 코드와 호환되도록 합니다.
"""


class SmacSegError(Exception):
    """파이프라인 예외의 최상위 클래스"""


class MalformedScanError(SmacSegError, ValueError):
    """스캔 바이트 길이가 16의 배수가 아닌 경우"""


class InvalidPointError(SmacSegError, ValueError):
    """스캔에 유한하지 않은 좌표/반사율이 포함된 경우"""


class LabelCountError(SmacSegError, ValueError):
    """라벨 수가 포인트 수와 다른 경우"""


class EncodingOverflowError(SmacSegError, ValueError):
    """semantic/instance id가 16비트 필드를 넘는 경우"""


class DimensionError(SmacSegError, ValueError):
    """배열 shape 또는 채널 수 불일치"""


class InvalidKernelError(SmacSegError, ValueError):
    """지원하지 않는 커널 모양 또는 짝수/0 이하 커널 크기"""


class NumericError(SmacSegError, ArithmeticError):
    """MLP 출력이나 함수 평가값이 유한하지 않은 경우"""


class InvalidLabelError(SmacSegError, ValueError):
    """클래스 범위를 벗어난 라벨"""


class PackingError(SmacSegError, RuntimeError):
    """합성 장면에서 최소 간격을 만족하도록 인스턴스를 배치하지 못한 경우"""


class ConfigError(SmacSegError, ValueError):
    """파이프라인 설정 값이 유효하지 않은 경우"""
