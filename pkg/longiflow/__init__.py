"""纵向三维图像分类：流场预计算 + 共享嵌入 + 可变形查询 Transformer"""

__version__ = "1.0.0"
