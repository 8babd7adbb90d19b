# app/core/config.py
import os
from dotenv import load_dotenv

load_dotenv()

class Settings:
    PROJECT_NAME: str = "NCA Tile Self-Classification API"
    VERSION: str = "1.0"
    WEIGHTS_PATH: str = os.getenv("NCA_WEIGHTS_PATH", "weights.bin")
    LOG_LEVEL: str = os.getenv("NCA_LOG_LEVEL", "INFO")
    ALLOWED_ORIGINS: list = ["*"]

settings = Settings()
