"""Versioned netlist documents: export/import of legalized topologies."""
import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import ConfigError
from .pdk import PdkSpec, footprint_exact, load_pdk
from .topology import TopoBlock, Topology, n_coupler_slots

NETLIST_VERSION = 1


def _block_doc(block: TopoBlock) -> dict:
    return {
        "ps": [float(v) for v in block.phases],
        "dc": {"mask": [int(v) for v in block.coupler_mask],
               "offset": int(block.offset)},
        "cr": [int(v) for v in block.perm],
    }


def topology_to_doc(topology: Topology, pdk: PdkSpec, provenance=None) -> dict:
    n_cr, n_dc, n_blk = topology.device_counts()
    return {
        "version": NETLIST_VERSION,
        "k": topology.k,
        "pdk": pdk.name,
        "unitaries": {
            "u": [_block_doc(b) for b in topology.blocks_u],
            "v": [_block_doc(b) for b in topology.blocks_v],
        },
        "footprint": {
            "n_blocks": n_blk,
            "n_dc": n_dc,
            "n_cr": n_cr,
            "area_um2": footprint_exact(topology, pdk),
        },
        "provenance": provenance or {},
    }


def doc_to_topology(doc: dict) -> Topology:
    """Validate and rebuild a topology; raises ConfigError on violations."""
    for key in ("version", "k", "pdk", "unitaries", "footprint"):
        if key not in doc:
            raise ConfigError(f"netlist is missing field '{key}'")
    if doc["version"] != NETLIST_VERSION:
        raise ConfigError(f"unsupported netlist version {doc['version']}")
    k = int(doc["k"])

    def parse_blocks(entries):
        blocks = []
        for entry in entries:
            perm = entry["cr"]
            if sorted(perm) != list(range(k)):
                raise ConfigError("cr not a permutation")
            offset = int(entry["dc"]["offset"])
            mask = entry["dc"]["mask"]
            if len(mask) != n_coupler_slots(k, offset):
                raise ConfigError("dc mask length does not match K and offset")
            if len(entry["ps"]) != k:
                raise ConfigError("ps column must hold K phases")
            blocks.append(TopoBlock(
                phases=np.asarray(entry["ps"], dtype=float),
                coupler_mask=np.asarray(mask, dtype=bool),
                offset=offset,
                perm=np.asarray(perm, dtype=int),
            ))
        return blocks

    topology = Topology(
        k=k,
        pdk_name=str(doc["pdk"]),
        blocks_u=parse_blocks(doc["unitaries"]["u"]),
        blocks_v=parse_blocks(doc["unitaries"]["v"]),
    )
    pdk = load_pdk(doc["pdk"])
    fp = doc["footprint"]
    n_cr, n_dc, n_blk = topology.device_counts()
    if (fp["n_blocks"], fp["n_dc"], fp["n_cr"]) != (n_blk, n_dc, n_cr):
        raise ConfigError("netlist device counts do not match its blocks")
    if fp["area_um2"] != footprint_exact(topology, pdk):
        raise ConfigError("netlist footprint summary does not match its counts")
    return topology


def dumps_canonical(doc: dict) -> str:
    """Stable text form used for byte-identical round trips."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_netlist(path, doc: dict):
    """Atomic write: temp file in the target directory, then rename."""
    text = dumps_canonical(doc)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_netlist(path) -> dict:
    with open(path, "r") as fh:
        return json.load(fh)


def config_hash(config_doc) -> str:
    blob = json.dumps(config_doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
