"""Receptive-field arithmetic for stacks of convolution/pooling layers.

A window of T x T cells at the output of a layer with kernel ``a`` and
stride ``s`` covers ``s*(T-1) + a`` cells at its input; composing that
recurrence from the target layer back to the image gives the pixel extent
of any pooled window. Padding is ignored throughout: a window is assumed
to sit fully inside the image, and boxes that stick out are handled by
clipping. All boxes are half-open integer pixel intervals
``(x0, y0, x1, y1)`` covering ``[x0, x1) x [y0, y1)``.
"""

from dataclasses import dataclass, field


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One convolution or pooling layer: square kernel, isotropic stride."""

    name: str
    kernel: int
    stride: int

    def __post_init__(self):
        if self.kernel < 1:
            raise GeometryError(f"layer {self.name!r}: kernel must be >= 1")
        if self.stride < 1:
            raise GeometryError(f"layer {self.name!r}: stride must be >= 1")


@dataclass(frozen=True)
class LayerStack:
    """Ordered layers from the input image toward the target layer."""

    layers: tuple = field(default_factory=tuple)
    input_size: int = 224

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_size < 1:
            raise GeometryError("input_size must be >= 1")

    @property
    def stride_product(self) -> int:
        prod = 1
        for layer in self.layers:
            prod *= layer.stride
        return prod


# imagenet-vgg-m, conv1 through conv5; one conv5 cell sees 139x139 pixels.
VGG_M = LayerStack(
    layers=(
        LayerSpec("conv1", 7, 2),
        LayerSpec("pool1", 3, 2),
        LayerSpec("conv2", 5, 2),
        LayerSpec("pool2", 3, 2),
        LayerSpec("conv3", 3, 1),
        LayerSpec("conv4", 3, 1),
        LayerSpec("conv5", 3, 1),
    ),
    input_size=224,
)

PRESETS = {"vgg-m": VGG_M}


def receptive_extent(stack: LayerStack, cells: int) -> int:
    """Pixel side length covered by a `cells` x `cells` block at the top layer."""
    if cells < 1:
        raise GeometryError("cells must be >= 1")
    r = cells
    for layer in reversed(stack.layers):
        r = layer.stride * (r - 1) + layer.kernel
    return r


def receptive_box(
    stack: LayerStack,
    scale: int,
    position: tuple,
    clip: bool,
    grid: int | None = None,
) -> tuple:
    """Image-space box of an MxM window whose origin cell is `position`.

    `position` is (row, col) in top-layer cells. When `grid` is given the
    origin is checked against the (grid - scale + 1)^2 valid window
    origins. With `clip` the box is intersected with the input square.
    """
    row, col = position
    if scale < 1:
        raise GeometryError("scale must be >= 1")
    if row < 0 or col < 0:
        raise GeometryError(f"position {position} out of range")
    if grid is not None:
        if scale > grid:
            raise GeometryError(f"scale {scale} exceeds grid size {grid}")
        if row > grid - scale or col > grid - scale:
            raise GeometryError(
                f"position {position} out of range for scale {scale} on a "
                f"{grid}x{grid} grid"
            )
    side = receptive_extent(stack, scale)
    step = stack.stride_product
    x0 = col * step
    y0 = row * step
    x1 = x0 + side
    y1 = y0 + side
    if clip:
        size = stack.input_size
        x0, y0 = min(x0, size), min(y0, size)
        x1, y1 = min(x1, size), min(y1, size)
    return (x0, y0, x1, y1)


def parse_stack_config(text: str) -> LayerStack:
    """Parse the declarative stack format: one `name kernel stride` per line.

    Blank lines and `#` comments are skipped. An optional `input <pixels>`
    line sets the input side (default 224).
    """
    layers = []
    input_size = 224
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "input":
            if len(parts) != 2:
                raise GeometryError(f"line {lineno}: expected `input <pixels>`")
            input_size = _parse_int(parts[1], lineno)
            continue
        if len(parts) != 3:
            raise GeometryError(
                f"line {lineno}: expected `name kernel stride`, got {raw!r}"
            )
        layers.append(
            LayerSpec(parts[0], _parse_int(parts[1], lineno), _parse_int(parts[2], lineno))
        )
    return LayerStack(layers=tuple(layers), input_size=input_size)


def load_stack(path) -> LayerStack:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_stack_config(fh.read())


def _parse_int(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise GeometryError(f"line {lineno}: {token!r} is not an integer") from None
