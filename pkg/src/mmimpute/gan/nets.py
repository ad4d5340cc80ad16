"""Encoder / decoder / discriminator / classifier networks for both modalities.

Every network owns one ParamSet initialised from its own named RNG stream,
so adding or removing a module never shifts another module's initial
weights.
"""
import numpy as np

from mmimpute.data import IMAGE_SHAPE
from mmimpute.diff import layers as L
from mmimpute.diff import tensor as T
from mmimpute.diff.params import ParamSet
from mmimpute.rng import make_rng

# pinned desk-scale widths
DEFAULTS = {
    "d_z": 64,                 # latent size per modality
    "factor_hidden": 64,       # width of the 4-affine-layer factor nets
    "image_channels": (8, 16, 32),
    "disc_z_channels": 8,      # projected latent channels broadcast onto the 4x4 map
    "classifier_hidden": 32,
}


class Net:
    """Callable holder of a ParamSet."""

    def __init__(self, name, seed):
        self.name = name
        self.params = ParamSet()
        self.rng = make_rng("init", seed, name)


class FactorEncoder(Net):
    """[x*m, m] -> z through 4 affine layers (leaky-ReLU between)."""

    def __init__(self, name, seed, n_in, d_z, hidden=DEFAULTS["factor_hidden"], with_mask=True):
        super().__init__(name, seed)
        self.with_mask = with_mask
        width = 2 * n_in if with_mask else n_in
        dims = [width, hidden, hidden, hidden, d_z]
        for i in range(4):
            L.init_affine(self.params, f"fc{i}", dims[i], dims[i + 1], self.rng)
        self.d_z = d_z

    def __call__(self, x, m=None):
        x = np.asarray(x, dtype=np.float32) if not isinstance(x, T.Tensor) else x
        if self.with_mask:
            m = np.asarray(m, dtype=np.float32)
            h = T.concat([T.as_tensor(x) * m, m], axis=1)
        else:
            h = T.as_tensor(x)
        for i in range(3):
            h = T.leaky_relu(L.affine(self.params, f"fc{i}", h))
        return L.affine(self.params, "fc3", h)


class FactorDecoder(Net):
    """z -> factor vector in (0, 1) through 4 affine layers."""

    def __init__(self, name, seed, d_in, n_out, hidden=DEFAULTS["factor_hidden"]):
        super().__init__(name, seed)
        dims = [d_in, hidden, hidden, hidden, n_out]
        for i in range(4):
            L.init_affine(self.params, f"fc{i}", dims[i], dims[i + 1], self.rng)

    def __call__(self, z, skips=None):
        h = z
        for i in range(3):
            h = T.relu(L.affine(self.params, f"fc{i}", h))
        return T.sigmoid(L.affine(self.params, "fc3", h))


class FactorDiscriminator(Net):
    """(x*m, m, z) -> logit through 4 affine layers."""

    def __init__(self, name, seed, n_x, d_z, hidden=DEFAULTS["factor_hidden"]):
        super().__init__(name, seed)
        dims = [2 * n_x + d_z, hidden, hidden, hidden, 1]
        for i in range(4):
            L.init_affine(self.params, f"fc{i}", dims[i], dims[i + 1], self.rng)

    def __call__(self, x, m, z):
        m = np.asarray(m, dtype=np.float32)
        h = T.concat([T.as_tensor(x) * m, T.as_tensor(m), z], axis=1)
        for i in range(3):
            h = T.leaky_relu(L.affine(self.params, f"fc{i}", h))
        return T.reshape(L.affine(self.params, "fc3", h), (-1,))


class ImageEncoder(Net):
    """3 stride-2 conv stages (32->16->8->4) then affine to z.

    With ``with_mask`` the input is [x*m, m] (2 channels). ``encode`` also
    returns the per-stage feature maps used as decoder skips.
    """

    def __init__(self, name, seed, d_z, channels=DEFAULTS["image_channels"], with_mask=True):
        super().__init__(name, seed)
        self.with_mask = with_mask
        c_in = 2 if with_mask else 1
        c1, c2, c3 = channels
        L.init_conv(self.params, "conv1", c_in, c1, 4, self.rng)
        L.init_conv(self.params, "conv2", c1, c2, 4, self.rng)
        L.init_conv(self.params, "conv3", c2, c3, 4, self.rng)
        L.init_affine(self.params, "fc", c3 * 16, d_z, self.rng)
        self.d_z = d_z

    def encode(self, x, m=None):
        x = T.as_tensor(np.asarray(x, dtype=np.float32) if not isinstance(x, T.Tensor) else x)
        if self.with_mask:
            m = np.broadcast_to(np.asarray(m, dtype=np.float32), x.shape)
            h = T.concat([x * m, T.Tensor(np.ascontiguousarray(m))], axis=1)
        else:
            h = x
        h1 = T.leaky_relu(L.conv(self.params, "conv1", h))
        h2 = T.leaky_relu(L.conv(self.params, "conv2", h1))
        h3 = T.leaky_relu(L.conv(self.params, "conv3", h2))
        z = L.affine(self.params, "fc", T.reshape(h3, (h3.shape[0], -1)))
        return z, (h1, h2, h3)

    def __call__(self, x, m=None):
        return self.encode(x, m)[0]


class ImageDecoder(Net):
    """z (+ skips from the background encoder) -> 1x32x32 patch in (0, 1)."""

    def __init__(self, name, seed, d_in, channels=DEFAULTS["image_channels"], skips=True):
        super().__init__(name, seed)
        c1, c2, c3 = channels
        self.channels = channels
        self.skips = skips
        k = 2 if skips else 1
        L.init_affine(self.params, "fc", d_in, c3 * 16, self.rng)
        L.init_tconv(self.params, "up3", k * c3, c2, 4, self.rng)
        L.init_tconv(self.params, "up2", k * c2, c1, 4, self.rng)
        L.init_tconv(self.params, "up1", k * c1, IMAGE_SHAPE[0], 4, self.rng)

    def __call__(self, z, skips=None):
        c3 = self.channels[2]
        h = T.relu(L.affine(self.params, "fc", z))
        h = T.reshape(h, (h.shape[0], c3, 4, 4))
        s1, s2, s3 = skips if self.skips else (None, None, None)
        if self.skips:
            h = T.concat([h, s3], axis=1)
        h = T.relu(L.tconv(self.params, "up3", h))
        if self.skips:
            h = T.concat([h, s2], axis=1)
        h = T.relu(L.tconv(self.params, "up2", h))
        if self.skips:
            h = T.concat([h, s1], axis=1)
        return T.sigmoid(L.tconv(self.params, "up1", h))


class ImageDiscriminator(Net):
    """(x*m, m) through 3 conv stages; z projected and broadcast onto the 4x4 map; affine -> logit."""

    def __init__(self, name, seed, d_z, channels=DEFAULTS["image_channels"], z_channels=DEFAULTS["disc_z_channels"]):
        super().__init__(name, seed)
        c1, c2, c3 = channels
        self.zc = z_channels
        L.init_conv(self.params, "conv1", 2, c1, 4, self.rng)
        L.init_conv(self.params, "conv2", c1, c2, 4, self.rng)
        L.init_conv(self.params, "conv3", c2, c3, 4, self.rng)
        L.init_affine(self.params, "zproj", d_z, z_channels, self.rng)
        L.init_affine(self.params, "fc", (c3 + z_channels) * 16, 1, self.rng)

    def __call__(self, x, m, z):
        x = T.as_tensor(x)
        m = np.broadcast_to(np.asarray(m, dtype=np.float32), x.shape)
        h = T.concat([x * m, T.Tensor(np.ascontiguousarray(m))], axis=1)
        h = T.leaky_relu(L.conv(self.params, "conv1", h))
        h = T.leaky_relu(L.conv(self.params, "conv2", h))
        h = T.leaky_relu(L.conv(self.params, "conv3", h))
        n = h.shape[0]
        zp = T.leaky_relu(L.affine(self.params, "zproj", z))
        zmap = T.broadcast_to(T.reshape(zp, (n, self.zc, 1, 1)), (n, self.zc, 4, 4))
        h = T.concat([h, zmap], axis=1)
        return T.reshape(L.affine(self.params, "fc", T.reshape(h, (n, -1))), (-1,))


class ImageClassifier(Net):
    """2 conv stages + affine -> 2 logits."""

    def __init__(self, name, seed, channels=DEFAULTS["image_channels"]):
        super().__init__(name, seed)
        c1, c2, _ = channels
        L.init_conv(self.params, "conv1", 1, c1, 4, self.rng)
        L.init_conv(self.params, "conv2", c1, c2, 4, self.rng)
        L.init_affine(self.params, "fc", c2 * 64, 2, self.rng)

    def __call__(self, x):
        h = T.leaky_relu(L.conv(self.params, "conv1", T.as_tensor(x)))
        h = T.leaky_relu(L.conv(self.params, "conv2", h))
        return L.affine(self.params, "fc", T.reshape(h, (h.shape[0], -1)))


class FactorClassifier(Net):
    """Factor vector -> 2 logits (two hidden affine layers)."""

    def __init__(self, name, seed, n_in, hidden=DEFAULTS["classifier_hidden"]):
        super().__init__(name, seed)
        L.init_affine(self.params, "fc0", n_in, hidden, self.rng)
        L.init_affine(self.params, "fc1", hidden, hidden, self.rng)
        L.init_affine(self.params, "fc2", hidden, 2, self.rng)

    def __call__(self, x):
        h = T.leaky_relu(L.affine(self.params, "fc0", T.as_tensor(x)))
        h = T.leaky_relu(L.affine(self.params, "fc1", h))
        return L.affine(self.params, "fc2", h)
