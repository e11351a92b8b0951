import math
from typing import Any, Optional

import pint

ureg = pint.UnitRegistry()


def as_magnitude(value: Any, unit: str, name: str) -> float:
    """
    Converts a number, a pint.Quantity or a quantity string to a float in `unit`.

    Plain numbers are taken as already expressed in `unit`.

    Args:
        value (int, float, str, pint.Quantity): The value to convert (e.g. 50, "2.5 kHz").
        unit (str): Target unit understood by pint (e.g. "Hz", "s", "rad").
        name (str): Name of the value, used in error messages.

    Returns:
        float: The magnitude in the requested unit.

    Raises:
        TypeError: If `value` is not a number, a string or a pint.Quantity.
        ValueError: If the string cannot be parsed or has the wrong dimensionality.
    """
    if isinstance(value, bool):
        raise TypeError(f"Value for '{name}' must be a number or a quantity. Got {type(value)}.")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            value = ureg.Quantity(value)
        except Exception as e:
            raise ValueError(f"Cannot parse quantity '{value}' for '{name}': {e}") from e
    if isinstance(value, pint.Quantity):
        try:
            return float(value.to(unit).magnitude)
        except pint.DimensionalityError as e:
            raise ValueError(f"Quantity for '{name}' must be convertible to '{unit}': {e}") from e
    raise TypeError(f"Value for '{name}' must be a number, a string or a pint.Quantity. Got {type(value)}.")


def sampling_interval(dt: Any = None, sampling_rate: Any = None) -> float:
    """
    Resolves the sampling interval in seconds from either an interval or a rate.

    Raises:
        ValueError: If both or none are given, or the result is not positive.
    """
    if (dt is None) == (sampling_rate is None):
        raise ValueError("Exactly one of 'dt' and 'sampling_rate' must be given.")
    if dt is not None:
        seconds = as_magnitude(dt, "s", "dt")
    else:
        rate = as_magnitude(sampling_rate, "Hz", "sampling_rate")
        if rate <= 0:
            raise ValueError(f"'sampling_rate' must be positive. Got {rate}.")
        seconds = 1.0 / rate
    if not seconds > 0:
        raise ValueError(f"'dt' must be positive. Got {seconds}.")
    return seconds


def check_range(name: str, value: float, low: Optional[float] = None, high: Optional[float] = None,
                low_open: bool = False, high_open: bool = False):
    """
    Validates that `value` lies in the interval described by the bounds.

    Raises:
        ValueError: If `value` is NaN or outside the interval.
    """
    if isinstance(value, float) and math.isnan(value):
        raise ValueError(f"'{name}' must not be NaN.")
    if low is not None and (value < low or (low_open and value == low)):
        bracket = "(" if low_open else "["
        raise ValueError(f"'{name}' = {value} is out of range: expected {bracket}{low}, ...")
    if high is not None and (value > high or (high_open and value == high)):
        bracket = ")" if high_open else "]"
        raise ValueError(f"'{name}' = {value} is out of range: expected ..., {high}{bracket}")
