"""anonnet: anonymous-network computation on port-labeled graphs.

Simulates networks of identical finite automata that communicate
synchronously through locally numbered ports, with no node identities and
no knowledge of the network size.  Ships the protocols needed to compute
frequency-based functions of the initial values: extremum tracking with
restart invalidation, interval-averaging by pebble exchange, a compiler
from rational-inequality function specs to parallel averaging instances,
and an unbounded-memory interleaved scheme that recovers value frequencies
exactly.
"""

__version__ = "0.1.0"
