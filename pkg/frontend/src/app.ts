/** Browser entry: three.js point-cloud view wired to the session service.
 *
 * Controls: left click places a click at the active polarity, `x` toggles
 * polarity, `u` undoes, `f` finalizes, drag orbits, wheel zooms.
 */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";

import { OverlayState, MARKER_COLORS } from "./overlay.js";
import { pickPoint } from "./picking.js";
import { SessionClient, ServiceError } from "./session.js";
import { frameBBox, initialViewState, togglePolarity, ViewState } from "./view.js";

const PICK_RADIUS_PX = 8;

function toast(message: string): void {
  const el = document.getElementById("status");
  if (el) el.textContent = message;
}

export async function start(baseUrl: string, sceneId: string, container: HTMLElement): Promise<void> {
  const client = new SessionClient(baseUrl, sceneId);
  const overlay = new OverlayState();

  let geometryData: Awaited<ReturnType<SessionClient["loadGeometry"]>>;
  try {
    await client.open();
    geometryData = await client.loadGeometry();
  } catch (err) {
    toast(`cannot reach annotation service: ${err}`);
    return; // visible error state instead of a blank canvas
  }
  const meta = await client.sceneMeta();
  let view: ViewState = initialViewState(frameBBox(meta.bbox.min, meta.bbox.max));

  const renderer = new THREE.WebGLRenderer({ antialias: true });
  renderer.setSize(container.clientWidth, container.clientHeight);
  container.appendChild(renderer.domElement);
  const scene = new THREE.Scene();
  const camera = new THREE.PerspectiveCamera(50, container.clientWidth / container.clientHeight, 0.01, 1e4);
  camera.position.set(
    view.frame.target[0],
    view.frame.target[1] - view.frame.distance,
    view.frame.target[2] + view.frame.distance * 0.4,
  );
  const controls = new OrbitControls(camera, renderer.domElement);
  controls.target.set(...view.frame.target);
  controls.update();

  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position", new THREE.BufferAttribute(geometryData.positions, 3));
  const baseRgb = geometryData.colors;
  const colorAttr = new THREE.BufferAttribute(new Float32Array(baseRgb.length), 3);
  geometry.setAttribute("color", colorAttr);
  const points = new THREE.Points(
    geometry,
    new THREE.PointsMaterial({ size: view.pointSize, vertexColors: true, sizeAttenuation: false }),
  );
  scene.add(points);

  const markerGroup = new THREE.Group();
  scene.add(markerGroup);

  function repaint(): void {
    const rgb = overlay.colorize(baseRgb, view.colorMode);
    for (let i = 0; i < rgb.length; i++) colorAttr.array[i] = rgb[i] / 255;
    colorAttr.needsUpdate = true;
    markerGroup.clear();
    for (const marker of overlay.markers) {
      const c = MARKER_COLORS[marker.polarity];
      const mesh = new THREE.Mesh(
        new THREE.SphereGeometry(0.01 * overlay.markerScale(marker)),
        new THREE.MeshBasicMaterial({ color: new THREE.Color(c[0] / 255, c[1] / 255, c[2] / 255) }),
      );
      const i = marker.pointIndex;
      mesh.position.set(
        geometryData.positions[i * 3],
        geometryData.positions[i * 3 + 1],
        geometryData.positions[i * 3 + 2],
      );
      markerGroup.add(mesh);
    }
  }
  repaint();

  renderer.domElement.addEventListener("click", async (ev: MouseEvent) => {
    const rect = renderer.domElement.getBoundingClientRect();
    const viewProjection = new THREE.Matrix4()
      .multiplyMatrices(camera.projectionMatrix, camera.matrixWorldInverse)
      .elements;
    const hit = pickPoint(
      geometryData.positions,
      viewProjection,
      { width: rect.width, height: rect.height },
      ev.clientX - rect.left,
      ev.clientY - rect.top,
      PICK_RADIUS_PX,
    );
    if (hit === null) return; // empty sky
    try {
      const doc = await client.addClick(hit.index, view.polarity);
      overlay.acknowledge(hit.index, view.polarity, doc.mask_version, await client.maskScores(doc));
      toast(
        `clicks: ${overlay.markers.length}  v${doc.mask_version}` +
          (doc.iou !== undefined ? `  IoU ${doc.iou.toFixed(3)}` : "") +
          `  ${client.lastRoundTripMs.toFixed(0)} ms`,
      );
      repaint();
    } catch (err) {
      if (err instanceof ServiceError && err.status === 409) toast("session finalized — input locked");
      else toast(`click failed: ${err}`);
    }
  });

  window.addEventListener("keydown", async (ev: KeyboardEvent) => {
    if (ev.key === "x") {
      view = togglePolarity(view);
      toast(`polarity: ${view.polarity}`);
    } else if (ev.key === "u" && overlay.markers.length > 0) {
      const doc = await client.undo();
      overlay.undo(doc.mask_version, await client.maskScores(doc));
      repaint();
    } else if (ev.key === "f") {
      const rec = await client.finalize();
      toast(`finalized after ${rec.n_clicks} clicks` + (rec.iou !== null ? `, IoU ${rec.iou.toFixed(3)}` : ""));
    }
  });

  renderer.setAnimationLoop(() => {
    controls.update();
    renderer.render(scene, camera);
  });
}
