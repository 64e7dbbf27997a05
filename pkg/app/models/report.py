"""
Evaluation report written by the eval command
"""

import json
import os
from typing import List, Literal, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


class EvalReport(BaseModel):
    """
    Mesh and image scores for one prediction

    Contains the metric values plus the settings they were computed with, so a
    CSV of reports from different runs stays comparable.
    """

    model_config = ConfigDict(extra="forbid")

    cd: float = Field(..., ge=0, description="Chamfer distance in units of 1e-3")
    fscore: float = Field(..., ge=0, le=100, description="F-Score in percent")
    nc: float = Field(..., ge=0, le=1, description="Normal consistency")
    depth_l1: Optional[float] = Field(None, ge=0, description="Aligned depth L1")
    normal_l1: Optional[float] = Field(None, ge=0, description="Normal componentwise L1")
    normal_angular: Optional[float] = Field(None, ge=0, le=180, description="Mean normal angle in degrees")
    image_l1: Optional[float] = Field(None, ge=0, description="Masked color L1")
    tau: float = Field(..., gt=0, description="F-Score threshold")
    samples: int = Field(..., ge=1, description="Points sampled per mesh")
    normalized: bool = Field(..., description="Longest-edge normalization applied")
    normalization_scale: float = Field(1.0, gt=0)
    chamfer_mode: Literal["mean", "sum"] = "mean"
    icp: bool = True
    icp_degenerate: bool = False

    @classmethod
    def csv_columns(cls) -> List[str]:
        return list(cls.model_fields)

    def to_json(self) -> str:
        """Stable-key-order JSON document"""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.model_dump(mode="json")], columns=self.csv_columns())

    def csv_row(self) -> str:
        return self.to_frame().to_csv(index=False, header=False, lineterminator="\n")

    def append_csv(self, path: str) -> None:
        """Append one row, writing the header first when the file is new"""
        new_file = not os.path.exists(path) or os.path.getsize(path) == 0
        self.to_frame().to_csv(path, mode="a", index=False, header=new_file, lineterminator="\n")
