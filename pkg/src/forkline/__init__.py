"""Fork-join tasks on work-stealing threads with segmented (cactus) stacks."""

from .cactus import SegmentedStack, StackletHeap, theorem1_bound
from .scheduler import (
    BUSY,
    LAZY,
    NumaTopology,
    Pool,
    PoolClosed,
    TaskFailed,
    Ticket,
    build_victim_table,
    flat,
    select_victim,
    two_level,
)
from .task import (
    Cell,
    ProtocolError,
    Slot,
    StackBuffer,
    call,
    current_worker,
    fork,
    frame_alloc,
    frame_dealloc,
    join,
    migrate_to,
    serial_run,
)
from .wsq import Steal, WorkStealingDeque

__version__ = "0.1.0"
