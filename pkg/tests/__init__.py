# traffic_hardening 测试套件
