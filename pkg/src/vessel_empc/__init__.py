"""Motion planning and economic MPC for 3-DOF surface vessels."""
