"""
GPS Ride Validator

Validates the rows of one ride before it becomes a Trace, so a single bad
ride is dropped with a clear message instead of aborting the whole file.
"""

from dataclasses import dataclass, field

from crowdswap.agents import TransportMode


@dataclass
class ValidationResult:
    """Result of validating a single ride."""
    is_valid: bool
    worker_id: str
    first_line: int = 0
    errors: list = field(default_factory=list)    # Ride is dropped
    warnings: list = field(default_factory=list)  # Ride is kept


def validate_ride_rows(worker_id, rows, bbox=None):
    """
    Validate the parsed rows of one ride.

    Runs checks in order, short-circuiting on structural failures:
    1. At least two GPS points
    2. A single, known transport mode
    3. Coordinates within WGS84 ranges
    4. Strictly increasing timestamps
    5. Points inside `bbox` (warning only; the engine drops such rides)

    Args:
        worker_id: Ride identifier.
        rows: List of (line_number, mode, t_s, lat, lon) tuples in file order.
        bbox: Optional operating-area bounding box.

    Returns:
        ValidationResult with is_valid, errors, and warnings.
    """
    first_line = rows[0][0] if rows else 0
    result = ValidationResult(is_valid=True, worker_id=worker_id, first_line=first_line)

    # --- Check 1: enough points ---
    if len(rows) < 2:
        result.is_valid = False
        result.errors.append(f"Ride '{worker_id}' has {len(rows)} point(s); at least 2 are needed.")
        return result

    # --- Check 2: transport mode ---
    modes = {mode for _, mode, _, _, _ in rows}
    if len(modes) != 1:
        result.is_valid = False
        result.errors.append(f"Ride '{worker_id}' mixes transport modes: {', '.join(sorted(modes))}.")
        return result
    try:
        TransportMode.parse(next(iter(modes)))
    except ValueError as e:
        result.is_valid = False
        result.errors.append(f"Ride '{worker_id}': {e}.")
        return result

    # --- Check 3: coordinate ranges ---
    for line, _, _, lat, lon in rows:
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            result.is_valid = False
            result.errors.append(f"Line {line}: coordinates ({lat}, {lon}) are out of range.")
            return result

    # --- Check 4: monotone timestamps ---
    for (_, _, t_prev, _, _), (line, _, t, _, _) in zip(rows, rows[1:]):
        if not t > t_prev:
            result.is_valid = False
            result.errors.append(
                f"Line {line}: timestamp {t} does not increase (previous {t_prev}) in ride '{worker_id}'."
            )
            return result

    # --- Check 5: operating area ---
    if bbox is not None:
        outside = [line for line, _, _, lat, lon in rows
                   if not (bbox.min_lat <= lat <= bbox.max_lat and bbox.min_lon <= lon <= bbox.max_lon)]
        if outside:
            result.warnings.append(
                f"Ride '{worker_id}' has {len(outside)} point(s) outside the operating area "
                f"(first at line {outside[0]})."
            )

    return result
