"""异常定义

exit_code 与命令行退出码一一对应：1 用法错误，2 数据错误，3 数值失败。
"""


class LongiFlowError(Exception):
    """插件异常基类"""
    exit_code = 2


class UsageError(LongiFlowError, ValueError):
    """参数或配置不合法"""
    exit_code = 1


class DataError(LongiFlowError):
    """清单、体数据、流场等输入数据错误"""
    exit_code = 2


class ShapeError(DataError, ValueError):
    """张量形状不匹配"""


class NumericalError(LongiFlowError, ArithmeticError):
    """出现非有限值或数值校验失败"""
    exit_code = 3


class GradientCheckError(NumericalError):
    """梯度校验超出阈值"""
