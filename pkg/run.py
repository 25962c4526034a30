#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
遍历型最优收获工具启动入口
"""

import os
import sys

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from harvest.cli import main

if __name__ == '__main__':
    main()
