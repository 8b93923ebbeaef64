"""Unloaded remote read latency versus bridge pipeline depth and link settings."""

import argparse
import math

from sdbridge.bridge import BridgeConfig, MemportEntry, SerdesLink
from sdbridge.bus import AddressRegion, Kind, LocalMemoryModel
from sdbridge.sim import Simulator
from sdbridge.system import build_two_node

WINDOW = AddressRegion(0x4_0000_0000, 1 << 30)
REMOTE_BASE = 0x8_0000_0000


def round_trip_ns(egress, ingress, slave_ns, line_gbps, header_bits, burst):
    sim = Simulator()
    if line_gbps is None:
        link = SerdesLink(line_rate=math.inf, payload_rate=math.inf, header_bits=0)
    else:
        link = SerdesLink(line_rate=line_gbps * 1e9, header_bits=header_bits)
    system = build_two_node(sim, link=link, bridge_cfg=BridgeConfig(egress, ingress),
                            local_model=LocalMemoryModel(latency_ns=slave_ns))
    e = MemportEntry(WINDOW, REMOTE_BASE - WINDOW.base, 0, 1, 0)
    system.nodes[0].bridge.table(0).set_slot(0, e)
    done = []
    system.nodes[0].masters[0].issue(Kind.READ, WINDOW.base, 8, burst, done.append)
    sim.run()
    return done[0].latency / 1000


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--egress", type=int, default=34)
    ap.add_argument("--ingress", type=int, default=33)
    args = ap.parse_args()
    print("slave_ns,line_gbps,header_bits,burst,round_trip_ns")
    cases = [(0, None, 0, 1), (0, 10, 64, 1), (60, 10, 64, 1), (60, 10, 64, 8), (60, 10, 0, 8)]
    for slave_ns, gbps, hdr, burst in cases:
        rt = round_trip_ns(args.egress, args.ingress, slave_ns, gbps, hdr, burst)
        print(f"{slave_ns},{gbps if gbps else 'inf'},{hdr},{burst},{rt:.3f}")


if __name__ == "__main__":
    main()
