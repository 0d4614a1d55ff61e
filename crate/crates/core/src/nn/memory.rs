//! Live-buffer accounting for weight storage during training.

/// Tracks which weight bytes are resident at every acquire/release event.
///
/// `resident = live uncompressed weight buffers + Σ compressed layer sizes`.
/// Raw (vanilla) layers are counted as uncompressed buffers that never leave.
#[derive(Debug, Clone, Default)]
pub struct MemoryMeter {
    compressed: Vec<usize>,
    live_weight_buffers: usize,
    live_weight_bytes: usize,
    live_grad_buffers: usize,
    live_grad_bytes: usize,
    largest_raw: usize,

    pub peak_weight_buffers: usize,
    pub peak_grad_buffers: usize,
    pub peak_resident_bytes: usize,
    /// Largest value of `resident - Σ compressed` seen at any event.
    pub peak_uncompressed_bytes: usize,
    /// Events where `resident > largest_raw + Σ compressed`.
    pub bound_violations: usize,
    pub events: usize,
}

impl MemoryMeter {
    pub fn new(layers: usize) -> Self {
        Self {
            compressed: vec![0; layers],
            ..Self::default()
        }
    }

    /// Declares the size of the largest raw weight matrix for the bound check.
    pub fn set_largest_raw(&mut self, bytes: usize) {
        self.largest_raw = bytes;
    }

    pub fn compressed_total(&self) -> usize {
        self.compressed.iter().sum()
    }

    pub fn resident_bytes(&self) -> usize {
        self.live_weight_bytes + self.compressed_total()
    }

    pub fn set_compressed(&mut self, layer: usize, bytes: usize) {
        if layer >= self.compressed.len() {
            self.compressed.resize(layer + 1, 0);
        }
        self.compressed[layer] = bytes;
        self.observe();
    }

    pub fn acquire_weight(&mut self, bytes: usize) {
        self.live_weight_buffers += 1;
        self.live_weight_bytes += bytes;
        self.observe();
    }

    pub fn release_weight(&mut self, bytes: usize) {
        self.live_weight_buffers -= 1;
        self.live_weight_bytes -= bytes;
        self.observe();
    }

    pub fn acquire_grad(&mut self, bytes: usize) {
        self.live_grad_buffers += 1;
        self.live_grad_bytes += bytes;
        self.observe();
    }

    pub fn release_grad(&mut self, bytes: usize) {
        self.live_grad_buffers -= 1;
        self.live_grad_bytes -= bytes;
        self.observe();
    }

    fn observe(&mut self) {
        self.events += 1;
        self.peak_weight_buffers = self.peak_weight_buffers.max(self.live_weight_buffers);
        self.peak_grad_buffers = self.peak_grad_buffers.max(self.live_grad_buffers);
        let resident = self.resident_bytes();
        self.peak_resident_bytes = self.peak_resident_bytes.max(resident);
        self.peak_uncompressed_bytes = self.peak_uncompressed_bytes.max(self.live_weight_bytes);
        if resident > self.largest_raw + self.compressed_total() {
            self.bound_violations += 1;
        }
    }
}
