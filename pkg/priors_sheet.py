import logging
import pathlib

import numpy as np
import openpyxl

import utils
from errors import ValidationError
from supervision import CATEGORY_NAMES, NUM_CATEGORIES

logger = logging.getLogger(__name__)

# Positive rate per category, long-tail profile; the four trailing categories are rare by construction.
DEFAULT_CLASS_PRIORS = {
    "Enlarged Cardiomediastinum": 0.189,
    "Cardiomegaly": 0.329,
    "Lung Opacity": 0.361,
    "Edema": 0.146,
    "Atelectasis": 0.218,
    "Pleural Effusion": 0.274,
    "Support Devices": 0.349,
    "Lung Lesion": 0.052,
    "Consolidation": 0.046,
    "Pneumonia": 0.043,
    "Pneumothorax": 0.019,
    "Pleural Other": 0.032,
    "Fracture": 0.038,
    "No Finding": 0.084,
    "Pleural Thickening": 0.028,
    "Nodule": 0.035,
    "Emphysema": 0.022,
    "Hernia": 0.012,
}

NAME_HEADERS = ("disease classes", "disease class", "class", "category")
PRIOR_HEADERS = ("distribution", "prior", "positive rate", "ratio")
SKIP_NAMES = ("", "-", "\u2013")

ALIASES = {
    "enlarged cardio": "Enlarged Cardiomediastinum",
    "enlarged cardiom.": "Enlarged Cardiomediastinum",
    "support device": "Support Devices",
}


def default_priors() -> np.ndarray:
    return np.array([DEFAULT_CLASS_PRIORS[name] for name in CATEGORY_NAMES])


def _canonical_name(raw) -> str:
    key = " ".join(str(raw).split()).lower()
    for name in CATEGORY_NAMES:
        if name.lower() == key:
            return name
    if key in ALIASES:
        return ALIASES[key]
    raise ValidationError(f"unknown disease class '{raw}'")


def _prior_value(raw, name) -> float:
    """Accept 0.361, 36.1 or '36.1%' for the same prior."""
    if isinstance(raw, str):
        text = raw.strip()
        try:
            value = float(text.rstrip("%")) / 100.0 if text.endswith("%") else float(text)
        except ValueError as e:
            raise ValidationError(f"prior for '{name}' is not a number: '{raw}'") from e
    elif isinstance(raw, (int, float)) and not isinstance(raw, bool):
        value = float(raw)
    else:
        raise ValidationError(f"prior for '{name}' is missing")
    if value > 1.0:
        value /= 100.0
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"prior for '{name}' must lie in [0, 1], got {value}")
    return value


class PriorsSheetParser:
    """
    Parser for class-prior workbooks. Every sheet is scanned for a block whose
    header row names a class column and a distribution column; rows below it
    are read until the next block starts.
    """
    def __init__(self, file_path: str):
        self.file_path = pathlib.Path(file_path)
        try:
            self.workbook = openpyxl.load_workbook(self.file_path, data_only=True, read_only=True)
        except (OSError, ValueError, KeyError) as e:
            raise ValidationError(f"cannot open priors workbook {self.file_path}: {e}") from e

    def parse(self) -> dict:
        result = {}
        for sheet_name in self.workbook.sheetnames:
            rows = list(self.workbook[sheet_name].iter_rows(values_only=True))
            for block in self._find_blocks(rows):
                result.update(self._parse_block(block))
        if not result:
            raise ValidationError(f"{self.file_path} has no class/distribution table")
        return result

    def _header_columns(self, row):
        header = [str(h).strip().lower() if h is not None else "" for h in row]
        name_idx = next((i for i, h in enumerate(header) if h in NAME_HEADERS), None)
        prior_idx = next((i for i, h in enumerate(header) if h in PRIOR_HEADERS), None)
        if name_idx is None or prior_idx is None:
            return None
        return name_idx, prior_idx

    def _find_blocks(self, rows):
        # A block starts at a header row and ends at the next header row or at the end
        blocks = []
        current = None
        for row in rows:
            cols = self._header_columns(row)
            if cols is not None:
                if current:
                    blocks.append(current)
                current = {"columns": cols, "rows": []}
            elif current is not None:
                current["rows"].append(row)
        if current:
            blocks.append(current)
        return blocks

    def _parse_block(self, block):
        name_idx, prior_idx = block["columns"]
        priors = {}
        for row in block["rows"]:
            if all(cell is None for cell in row):
                continue
            raw_name = row[name_idx] if name_idx < len(row) else None
            if not (raw_name and isinstance(raw_name, str)):
                continue
            if raw_name.strip() in SKIP_NAMES or str(row[0]).strip().lower() == "total":
                continue
            name = _canonical_name(raw_name)
            priors[name] = _prior_value(row[prior_idx] if prior_idx < len(row) else None, name)
        return priors


def priors_from_mapping(mapping) -> np.ndarray:
    """Complete a name -> prior mapping with the defaults, in category order."""
    merged = dict(DEFAULT_CLASS_PRIORS)
    for raw_name, raw_value in mapping.items():
        name = _canonical_name(raw_name)
        merged[name] = _prior_value(raw_value, name)
    missing = [name for name in CATEGORY_NAMES if name not in {_canonical_name(n) for n in mapping}]
    if missing:
        logger.info("using default priors for %d classes: %s", len(missing), ", ".join(missing))
    return np.array([merged[name] for name in CATEGORY_NAMES])


def load_priors(path) -> np.ndarray:
    """Read 18 class priors from a JSON list/object or an .xlsx table."""
    path = pathlib.Path(path)
    if path.suffix.lower() in (".xlsx", ".xlsm"):
        return priors_from_mapping(PriorsSheetParser(path).parse())
    data = utils.load_json(path)
    if isinstance(data, dict):
        return priors_from_mapping(data)
    if isinstance(data, list):
        if len(data) != NUM_CATEGORIES:
            raise ValidationError(f"{path} lists {len(data)} priors, expected {NUM_CATEGORIES}")
        return np.array([_prior_value(v, CATEGORY_NAMES[k]) for k, v in enumerate(data)])
    raise ValidationError(f"{path} must hold a list or an object of priors")


def write_priors_sheet(path, priors=None):
    """Write a one-sheet workbook in the layout PriorsSheetParser reads back."""
    priors = default_priors() if priors is None else np.asarray(priors, dtype=np.float64)
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "Priors"
    ws.append(["Group", "Disease Classes", "Distribution"])
    for name, prior in zip(CATEGORY_NAMES, priors):
        ws.append(["Head" if prior > 0.10 else "Tail", name, float(prior)])
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(path)
    return path
