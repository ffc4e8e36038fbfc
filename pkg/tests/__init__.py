"""RUPNet test suites"""
