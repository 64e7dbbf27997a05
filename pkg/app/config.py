"""
Process-level settings for ShapeSeeker
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    """Application settings from environment variables"""

    # Application Settings
    APP_NAME: str = "ShapeSeeker"
    APP_VERSION: str = os.getenv("APP_VERSION", "1.0.0")
    DEBUG: bool = os.getenv("DEBUG", "false").lower() == "true"

    # Logging
    LOG_DIR: str = os.getenv("SHAPESEEKER_LOG_DIR", "logs")
    LOG_LEVEL: str = os.getenv("SHAPESEEKER_LOG_LEVEL", "DEBUG" if DEBUG else "INFO")

    # Runtime
    WORKERS: int = int(os.getenv("SHAPESEEKER_WORKERS", "1"))
    PROGRESS: bool = os.getenv("SHAPESEEKER_PROGRESS", "true").lower() == "true"

    def validate(self) -> None:
        """Validate settings"""
        if self.WORKERS < 1:
            raise ValueError("SHAPESEEKER_WORKERS must be at least 1")
        if self.LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown SHAPESEEKER_LOG_LEVEL: {self.LOG_LEVEL}")


# Global settings instance
settings = Settings()
