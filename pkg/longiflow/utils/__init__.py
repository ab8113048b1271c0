# 工具包
