"""Trust management for connected vehicles on a two-chain ledger.

A fast trust-points chain settles disputes over vehicle messages by
stake-weighted voting; a slow proof-of-travel chain turns message
contributions into credits that feed the stake.
"""
__version__ = "0.1.0"
