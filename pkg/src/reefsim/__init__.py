"""reefsim: headless underwater oyster-reef simulator.

Procedurally generates oyster-reef scenes, renders RGB/depth/instance-mask
imagery through a scattering water medium, synthesizes IMU and sonar
measurements, exports ground-truth datasets, and serves a live
teleoperation session for human control labeling.
"""

from .reef import (
    Heightfield,
    Lighting,
    PlacementConfig,
    ReefScene,
    SceneInstance,
    WaterMedium,
    compose_scene,
    generate_heightfield,
    poisson_disk_place,
    turbidity_to_medium,
)
from .render import (
    AccelStructure,
    CameraModel,
    FrameBundle,
    build_accel,
    mount_cameras,
    render_frame,
    shade_underwater,
    trace_primary,
)
from .rotations import RigidTransform
from .sensors import (
    ImuConfig,
    ImuSample,
    SonarConfig,
    SonarReturn,
    WaterProperties,
    scan_sonar,
    sound_speed,
    synth_imu,
)
from .shellgen import (
    BSplineCurve,
    LayerProfile,
    OysterShellSpec,
    TriangleMesh,
    eval_bspline,
    extrude_shell,
    generate_layers,
    generate_shell,
    validate_mesh,
)
from .trajectory import (
    ControlCommand,
    ControlLabel,
    ControlLimits,
    PoseSample,
    Trajectory,
    fit_path,
    lawnmower_pattern,
    quantize_control,
    sample_pose,
    step_kinematics,
)

__version__ = "0.1.0"
