# Configuration management 