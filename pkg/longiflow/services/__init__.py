# 服务层包
