"""
fdialab - 机械臂传感器虚假数据注入攻击与主动防御协同仿真
"""

__version__ = "0.1.0"
