import numpy as np

from hazardtwin.district import BuildingType, District, NodeRecord


def make_district(xy, types=None, pop=None, vuln=None, burden=None, sensors=None):
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    types = [BuildingType.MultiFamily] * n if types is None else types
    pop = [100] * n if pop is None else pop
    vuln = np.linspace(0.2, 0.8, n) if vuln is None else vuln
    burden = np.linspace(0.8, 0.2, n) if burden is None else burden
    sensors = [False] * n if sensors is None else sensors
    total = max(float(np.max(pop)), 1.0)
    nodes = tuple(
        NodeRecord(i, float(xy[i, 0]), float(xy[i, 1]), BuildingType(types[i]), int(pop[i]), 60.0,
                   float(burden[i]), float(vuln[i]), bool(sensors[i]), float(pop[i]) / total)
        for i in range(n)
    )
    return District(nodes, 0)
