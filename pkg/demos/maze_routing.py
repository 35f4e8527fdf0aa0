"""Generate a maze, route robots through it, and compare the two motion models.

Run:  python demos/maze_routing.py
"""
import numpy as np

from robosched.gridworld import MotionModel, Routing, generate_maze

maze = generate_maze(seed=0, width=11, height=11, dot_density=0.3)
print(maze.to_text())

det = Routing(maze, MotionModel.deterministic(), n_samples=1, seed=0)
stoch = Routing(maze, MotionModel.stochastic(), n_samples=200, seed=0)

# pick the two open cells farthest apart
a, b = np.unravel_index(np.argmax(det.dist), det.dist.shape)
print(f"{det.cell_of(a)} -> {det.cell_of(b)}")
print(f"  shortest path        {det.dist[a, b]} steps")
print(f"  stochastic mean      {stoch.mean_time(a, b):.1f} steps")
samples = stoch.samples[a, b]
print(f"  stochastic 10/50/90% {np.percentile(samples, [10, 50, 90])}")
