"""Two-process trust boundary: a Source that encodes and an Inference server that predicts."""
