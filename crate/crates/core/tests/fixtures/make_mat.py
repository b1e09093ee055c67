"""Regenerate the MAT-file fixtures with scipy (headers embed a timestamp,
so bytes differ between runs; decoded contents do not)."""
import numpy as np
from scipy.io import savemat

savemat("val_pair.mat", {"val": np.array([[10, -10]], dtype=np.int16)})
savemat("val_long.mat", {"val": np.arange(-300, 300, 3, dtype=np.int16)[None, :]})
savemat("compressed.mat", {"val": np.array([[10, -10]], dtype=np.int16)}, do_compression=True)
savemat("double_val.mat", {"val": np.array([[1.5, 2.0]])})
