#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
服务层模块初始化
"""
