"""内置运行配置预设"""
