"""Write the demo sensor trajectories (TUM format)."""

from pathlib import Path

from lidarspace.lidar_sim import ellipse_trajectory, straight_trajectory

here = Path(__file__).parent
# 100 frames at 10 Hz: one lap of a 3 m x 2 m ellipse at 1.4 m height
ellipse_trajectory((0.13, -0.08), (3.0, 2.0), 1.4, period=10.0, duration=9.9).write(here / "room" / "trajectory.txt")
# parked sensor for 6 s
straight_trajectory((0.4, -1.1, 1.4), (0.4, -1.1, 1.4), 0.0, 5.9).write(here / "mover" / "trajectory.txt")
