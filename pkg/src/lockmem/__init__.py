"""Lock-mechanism safe manipulation with vector-quantized memory."""
