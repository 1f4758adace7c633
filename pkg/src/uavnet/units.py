"""Unit conversions used at the configuration boundary."""

import math

JOULES_PER_WH = 3600.0


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * math.log10(w) + 30.0


def kmh_to_mps(kmh):
    return kmh / 3.6


def wh_to_joules(wh):
    return wh * JOULES_PER_WH
