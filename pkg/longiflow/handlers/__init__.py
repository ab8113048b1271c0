"""处理器模块"""
