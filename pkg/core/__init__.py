"""
核心功能模块：博弈表示、离散/连续动态、模型无关学习与实验编排
"""
