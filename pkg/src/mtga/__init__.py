"""Event-based lip reading with event frames, voxel graph lists and aligned fusion."""

__version__ = "0.1.0"

from .events import Event, EventStream, SensorGeometry, SyntheticSpec, generate_synthetic, read_stream, write_stream
from .frames import EventFrameTensor, FrameConfig, build_frames, render_frame
from .graphs import GraphConfig, VoxelGraph, VoxelGraphList, build_edges, build_graph_list, select_top_k, voxelize
from .model import MTGAModel, ModelConfig, train_step

__all__ = [
    "Event", "EventStream", "SensorGeometry", "SyntheticSpec", "generate_synthetic",
    "read_stream", "write_stream", "EventFrameTensor", "FrameConfig", "build_frames",
    "render_frame", "GraphConfig", "VoxelGraph", "VoxelGraphList", "build_edges",
    "build_graph_list", "select_top_k", "voxelize", "MTGAModel", "ModelConfig", "train_step",
]
