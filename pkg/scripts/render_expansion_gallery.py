#!/usr/bin/env python3
"""Render the first expansion round of a generated scene as a contact
sheet: the reference view plus the terminal view of each of the nine
root candidates, labeled by trajectory string in the filename.

    python scripts/render_expansion_gallery.py --out out/gallery
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from spatialbeam.bench import generate_suite
from spatialbeam.geometry import CameraPose, Intrinsics, cumulative_poses
from spatialbeam.search import BeamNode, SearchConfig, Trajectory, expand, trajectory_string
from spatialbeam.worldmodel import Frame, render


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frame-size", type=int, default=192)
    parser.add_argument("--out", type=Path, default=Path("out/gallery"))
    args = parser.parse_args()

    intrinsics = Intrinsics.from_fov(args.frame_size, args.frame_size)
    cfg = SearchConfig()
    case = generate_suite(args.seed, 1, intrinsics=intrinsics, cfg=cfg)[0]
    args.out.mkdir(parents=True, exist_ok=True)

    tiles = [render(case.scene, CameraPose.identity(), intrinsics)]
    names = ["reference"]
    for candidate in expand(BeamNode(Trajectory(), None, 0), cfg):
        pose = cumulative_poses(candidate.full_trajectory)[-1]
        tiles.append(render(case.scene, pose, intrinsics))
        names.append(trajectory_string(candidate.full_trajectory).replace("|", "_"))

    for name, tile in zip(names, tiles):
        (args.out / f"{name}.png").write_bytes(tile.to_png_bytes())
    sheet = Frame(np.concatenate([t.pixels for t in tiles], axis=1))
    (args.out / "contact-sheet.png").write_bytes(sheet.to_png_bytes())
    print(f"question: {case.question.text}")
    print(f"revealing trajectory: {trajectory_string(case.revealing_trajectory)}")
    print(f"wrote {len(tiles)} tiles and contact-sheet.png to {args.out}")


if __name__ == "__main__":
    main()
