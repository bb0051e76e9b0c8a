#  MIT License
#
#  Copyright (c) 2021 ben
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
"""Omnidirectional depth extension with spherical feature transforms and deformable propagation."""
from __future__ import annotations

from odecnn import cli
from odecnn import gradcheck
from odecnn.checkpoint import *
from odecnn.checks import *
from odecnn.colours import *
from odecnn.commands import *
from odecnn.config import *
from odecnn.context import *
from odecnn.cspn import *
from odecnn.errors import *
from odecnn.handler import *
from odecnn.hooks import *
from odecnn.imageio import *
from odecnn.layers import *
from odecnn.metrics import *
from odecnn.network import *
from odecnn.parsing import *
from odecnn.sampling import *
from odecnn.sphere import *
from odecnn.synth import *
from odecnn.tensor import *
from odecnn.training import *

__version__ = "0.1.0"
