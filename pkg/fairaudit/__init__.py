# -*- coding: utf-8 -*-
"""
fairaudit - Simultaneous statistical auditing of model performance across groups
================================================================================

fairaudit audits a deployed model from its audit trail: a table holding, for
every record, the model's loss and the covariates that define groups. It
compares each group's mean loss with a target and reports the comparison with
guarantees that hold simultaneously over all groups.

Given a collection of groups (categorical intersections, all sub-intervals of
a numeric grid, or explicit memberships), fairaudit can:

* compute simultaneous lower, upper, or two-sided confidence bounds on every
  group's disparity with one multinomial bootstrap;
* issue Boolean certificates that disparities clear a tolerance, controlling
  the family-wise error rate;
* flag groups whose disparities exceed a tolerance, controlling the false
  discovery rate with Benjamini-Hochberg;
* bound the disparity under any covariate shift in the non-negative unit ball
  of a reproducing kernel Hilbert space from a single critical value.

Modules include:

    :mod:`fairaudit.certify`
        Confidence bounds and Boolean certificates.
    :mod:`fairaudit.flagging`
        Bootstrap p-values and FDR-controlled flags.
    :mod:`fairaudit.rkhs`
        Distribution-shift audits.
    :mod:`fairaudit.validation`
        Monte Carlo experiments that check the error rates on simulated data.
    :mod:`fairaudit.file_io`
        CSV ingestion, run configuration, and report writing; the command line
        interface is in :mod:`fairaudit.cli`.

"""


__version__ = '0.1.0'


from .audit_trail import AuditTrail, MomentCache, TargetSpec, empirical_disparity, s_hat
from .bootstrap import BootstrapConfig, quantile
from .certify import (
    CertificationReport, boolean_certify, lower_bounds, two_sided_bounds, upper_bounds
)
from .flagging import FlagReport, benjamini_hochberg, flag_p_values
from .groups import ExplicitGroups, IntervalGroups, interval_grid, intersect_categorical
from .rkhs import KernelSpec, ShiftQuery, rkhs_critical_value, shift_lower_bound
from .utils import AuditError, AuditInputError, DegenerateDataError
from . import file_io, synthetic_data, validation
