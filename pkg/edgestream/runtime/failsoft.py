import logging
from dataclasses import replace
from enum import Enum

from core.exceptions import ContractViolation

logger = logging.getLogger(__name__)


class FailSoftPolicy(str, Enum):
    DROP_TUPLE = 'drop_tuple'
    LAST_KNOWN_GOOD = 'last_known_good'
    ABSTAIN = 'abstain'


def fail_soft_impute(joined, failed, policy, last_good):
    """
    Resolve the ``failed`` slot indices of ``joined`` under ``policy``.
    Returns the repaired tuple, or None when it has to be dropped.
    """
    if not failed:
        return joined
    if len(failed) >= len(joined.slots):
        return None
    policy = FailSoftPolicy(policy)
    if policy == FailSoftPolicy.DROP_TUPLE:
        return None
    repaired = joined
    for index in sorted(failed):
        slot = joined.slots[index]
        if policy == FailSoftPolicy.ABSTAIN:
            repaired = repaired.with_slot(index, replace(slot, payload=None, missing=True))
            continue
        substitute = last_good.get(slot.header.stream)
        if substitute is None:
            logger.debug('No last known good value for %s, dropping tuple', slot.header.stream)
            return None
        repaired = repaired.with_slot(index, replace(slot, payload=substitute, substituted=True))
    return repaired


class FailSoft:
    def __init__(self, policy=FailSoftPolicy.DROP_TUPLE):
        self.policy = FailSoftPolicy(policy)
        self.last_good = {}
        self.substitutions = 0
        self.abstentions = 0

    def record_good(self, stream, payload):
        if payload is None:
            raise ContractViolation('cannot remember a missing payload')
        self.last_good[stream] = payload

    def impute(self, joined, failed):
        repaired = fail_soft_impute(joined, failed, self.policy, self.last_good)
        if repaired is not None and failed:
            if self.policy == FailSoftPolicy.LAST_KNOWN_GOOD:
                self.substitutions += len(failed)
            else:
                self.abstentions += len(failed)
        return repaired
