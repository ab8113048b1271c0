"""日志工具"""
try:
    from astrbot.api import logger
except ImportError:
    # 脱离AstrBot运行（命令行、测试）时使用标准日志
    import logging

    logger = logging.getLogger("astrbot_plugin_longiflow")
    if not logger.handlers:
        _handler = logging.StreamHandler()
        _handler.setFormatter(logging.Formatter("[%(asctime)s] [%(levelname)s] %(message)s"))
        logger.addHandler(_handler)
        logger.setLevel(logging.INFO)

__all__ = ["logger"]
