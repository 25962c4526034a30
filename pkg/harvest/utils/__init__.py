#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
工具类模块初始化
"""
