"""让测试可以直接导入项目根目录下的 config/core/utils 包。"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
